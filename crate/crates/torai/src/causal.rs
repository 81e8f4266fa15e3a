//! Divide-and-conquer causal target discovery over regime-labelled series.
//!
//! The failure is encoded as a binary regime column F (0 = normal bin,
//! 1 = abnormal bin). A series is an interventional target when its
//! dependence on F survives every attempted conditional-independence
//! separation against its fellow F-dependent series, PC-style. Chunking
//! keeps each round of tests small; survivors are pooled and re-tested
//! until one chunk remains.

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::error::{Error, Result};
use crate::model::{AnalysisWindow, TimeSeries};
use crate::parallel;
use crate::severity::{SeriesRef, SeverityVector};

/// Raw-variance threshold below which a column is dropped as constant.
pub const CONSTANT_VARIANCE: f64 = 1e-12;
/// Partial correlations are clamped to ±(1 - R_CLAMP) before the z-transform.
const R_CLAMP: f64 = 1e-12;
/// Hard bound on recursion depth; reaching it falls back to marginal order.
const MAX_LEVELS: usize = 64;

/// Tuning for the causal stage.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CausalConfig {
    pub alpha: f64,
    pub chunk_size: usize,
    pub max_cond_size: usize,
    pub seed: u64,
}

impl Default for CausalConfig {
    fn default() -> Self {
        CausalConfig {
            alpha: 0.05,
            chunk_size: 10,
            max_cond_size: 2,
            seed: 0,
        }
    }
}

impl CausalConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::input("alpha must lie in (0, 1)"));
        }
        if self.chunk_size < 2 {
            return Err(Error::input("chunk_size must be at least 2"));
        }
        Ok(())
    }
}

/// Counters surfaced into the report diagnostics.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CausalDiagnostics {
    pub constant_columns_dropped: u64,
    pub singular_ci_tests: u64,
}

impl CausalDiagnostics {
    pub fn merge(&mut self, other: &CausalDiagnostics) {
        self.constant_columns_dropped += other.constant_columns_dropped;
        self.singular_ci_tests += other.singular_ci_tests;
    }
}

/// A series confirmed as an interventional target, scored by its marginal
/// F-dependence p-value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetScore {
    pub series: SeriesRef,
    pub p_value: f64,
}

/// Pooled normal+abnormal bins: standardized data columns plus the binary
/// regime column F marking the window split.
#[derive(Debug, Clone)]
pub struct RegimeMatrix {
    refs: Vec<SeriesRef>,
    cols: Vec<Vec<f64>>,
    regime: Vec<f64>,
    pub dropped_constant: u64,
}

impl RegimeMatrix {
    /// Builds the matrix, standardizing every data column to zero mean and
    /// unit variance and dropping near-constant columns.
    pub fn build(series: &[&TimeSeries], window: &AnalysisWindow) -> Result<RegimeMatrix> {
        if series.is_empty() {
            return Err(Error::input("cannot build a regime matrix from zero series"));
        }
        let n_bins = window.n_bins();
        let split = window.split_index();
        let regime: Vec<f64> = (0..n_bins).map(|b| if b < split { 0.0 } else { 1.0 }).collect();

        let mut refs = Vec::new();
        let mut cols = Vec::new();
        let mut dropped = 0u64;
        for ts in series {
            if ts.values.len() != n_bins {
                return Err(Error::input(format!(
                    "series {}/{} does not span the window",
                    ts.service, ts.indicator
                )));
            }
            let n = n_bins as f64;
            let mean = ts.values.iter().sum::<f64>() / n;
            let var = ts.values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
            if var < CONSTANT_VARIANCE {
                dropped += 1;
                continue;
            }
            let std = var.sqrt();
            cols.push(ts.values.iter().map(|v| (v - mean) / std).collect());
            refs.push(SeriesRef::of(ts));
        }
        Ok(RegimeMatrix {
            refs,
            cols,
            regime,
            dropped_constant: dropped,
        })
    }

    pub fn n_rows(&self) -> usize {
        self.regime.len()
    }

    /// Data columns only; the regime column is separate.
    pub fn n_cols(&self) -> usize {
        self.cols.len()
    }

    pub fn series_ref(&self, col: usize) -> &SeriesRef {
        &self.refs[col]
    }

    pub fn column(&self, col: usize) -> &[f64] {
        &self.cols[col]
    }

    pub fn regime(&self) -> &[f64] {
        &self.regime
    }
}

fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut va = 0.0;
    let mut vb = 0.0;
    for (x, y) in a.iter().zip(b.iter()) {
        let dx = x - ma;
        let dy = y - mb;
        cov += dx * dy;
        va += dx * dx;
        vb += dy * dy;
    }
    let denom = (va * vb).sqrt();
    if denom <= 0.0 {
        return 0.0;
    }
    (cov / denom).clamp(-1.0, 1.0)
}

/// Outcome of one conditional-independence test.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CiTest {
    pub r: f64,
    pub p_value: f64,
    /// The conditioning set produced a singular correlation submatrix; the
    /// pair was treated as independent (p = 1).
    pub singular: bool,
}

/// Partial correlation of variables 0 and 1 of `corr` given the rest, via
/// inversion of the correlation submatrix. Returns None when singular.
fn partial_corr(corr: &DMatrix<f64>) -> Option<f64> {
    if corr.nrows() == 2 {
        return Some(corr[(0, 1)]);
    }
    let inv = corr.clone().try_inverse()?;
    let denom = inv[(0, 0)] * inv[(1, 1)];
    if denom <= 0.0 {
        return None;
    }
    Some((-inv[(0, 1)] / denom.sqrt()).clamp(-1.0, 1.0))
}

fn z_test(r: f64, n: usize, cond: usize) -> f64 {
    let r = r.clamp(-(1.0 - R_CLAMP), 1.0 - R_CLAMP);
    let z = r.atanh();
    let stat = z.abs() * ((n - cond - 3) as f64).sqrt();
    erfc(stat / std::f64::consts::SQRT_2)
}

/// Fisher-z conditional-independence test between columns `i` and `j`
/// given `cond`, over an arbitrary set of equal-length columns.
///
/// Partial correlation comes from inverting the correlation submatrix of
/// the involved variables; the p-value is two-sided from the standard
/// normal. A singular conditioning set yields p = 1 with the `singular`
/// flag set.
pub fn fisher_z(columns: &[&[f64]], i: usize, j: usize, cond: &[usize]) -> Result<CiTest> {
    let n = columns
        .first()
        .map(|c| c.len())
        .ok_or_else(|| Error::input("fisher_z needs at least one column"))?;
    if n <= cond.len() + 3 {
        return Err(Error::input(format!(
            "fisher_z needs more than {} rows, got {n}",
            cond.len() + 3
        )));
    }
    let mut vars = Vec::with_capacity(cond.len() + 2);
    vars.push(i);
    vars.push(j);
    vars.extend_from_slice(cond);
    let m = vars.len();
    let mut corr = DMatrix::<f64>::identity(m, m);
    for a in 0..m {
        for b in (a + 1)..m {
            let r = pearson(columns[vars[a]], columns[vars[b]]);
            corr[(a, b)] = r;
            corr[(b, a)] = r;
        }
    }
    match partial_corr(&corr) {
        Some(r) => Ok(CiTest {
            r,
            p_value: z_test(r, n, cond.len()),
            singular: false,
        }),
        None => Ok(CiTest {
            r: 0.0,
            p_value: 1.0,
            singular: true,
        }),
    }
}

fn combinations(items: &[usize], size: usize) -> Vec<Vec<usize>> {
    if size == 0 {
        return vec![Vec::new()];
    }
    if items.len() < size {
        return Vec::new();
    }
    let mut out = Vec::new();
    for (idx, &first) in items.iter().enumerate() {
        if items.len() - idx < size {
            break;
        }
        for mut rest in combinations(&items[idx + 1..], size - 1) {
            let mut combo = Vec::with_capacity(size);
            combo.push(first);
            combo.append(&mut rest);
            out.push(combo);
        }
    }
    out
}

/// Identifies the interventional targets of one chunk.
///
/// A column survives only if no conditioning set of F-dependent peers (up
/// to `max_cond_size`) renders it independent of the regime. Adjacency
/// shrinks level by level, with removals applied at the end of each level
/// so the outcome does not depend on iteration order. Survivors are sorted
/// by marginal p ascending, ties by (service, indicator).
pub fn find_targets(
    series: &[&TimeSeries],
    window: &AnalysisWindow,
    cfg: &CausalConfig,
) -> Result<(Vec<TargetScore>, CausalDiagnostics)> {
    if series.is_empty() {
        return Err(Error::input("find_targets needs a nonempty chunk"));
    }
    let matrix = RegimeMatrix::build(series, window)?;
    let mut diag = CausalDiagnostics {
        constant_columns_dropped: matrix.dropped_constant,
        ..Default::default()
    };
    if matrix.n_cols() == 0 {
        return Ok((Vec::new(), diag));
    }
    let n = matrix.n_rows();
    if n < cfg.max_cond_size + 5 {
        return Err(Error::input(format!(
            "{n} pooled bins is too few for conditioning sets of size {}",
            cfg.max_cond_size
        )));
    }

    // Precompute correlations among all columns and against F.
    let k = matrix.n_cols();
    let mut corr = DMatrix::<f64>::identity(k + 1, k + 1);
    for a in 0..k {
        for b in (a + 1)..k {
            let r = pearson(matrix.column(a), matrix.column(b));
            corr[(a, b)] = r;
            corr[(b, a)] = r;
        }
        let rf = pearson(matrix.column(a), matrix.regime());
        corr[(a, k)] = rf;
        corr[(k, a)] = rf;
    }

    let test = |x: usize, cond: &[usize], diag: &mut CausalDiagnostics| -> f64 {
        let mut vars = Vec::with_capacity(cond.len() + 2);
        vars.push(k); // F
        vars.push(x);
        vars.extend_from_slice(cond);
        let m = vars.len();
        let mut sub = DMatrix::<f64>::identity(m, m);
        for a in 0..m {
            for b in (a + 1)..m {
                sub[(a, b)] = corr[(vars[a], vars[b])];
                sub[(b, a)] = sub[(a, b)];
            }
        }
        match partial_corr(&sub) {
            Some(r) => z_test(r, n, cond.len()),
            None => {
                diag.singular_ci_tests += 1;
                1.0
            }
        }
    };

    // Level 0: marginal dependence on F.
    let marginal: Vec<f64> = (0..k).map(|x| test(x, &[], &mut diag)).collect();
    let mut adjacent: Vec<usize> = (0..k).filter(|&x| marginal[x] <= cfg.alpha).collect();

    for level in 1..=cfg.max_cond_size {
        let frozen = adjacent.clone();
        let mut separated = vec![false; k];
        for &x in &frozen {
            let neighbors: Vec<usize> = frozen.iter().copied().filter(|&y| y != x).collect();
            if neighbors.len() < level {
                continue;
            }
            'sets: for cond in combinations(&neighbors, level) {
                if test(x, &cond, &mut diag) > cfg.alpha {
                    separated[x] = true;
                    break 'sets;
                }
            }
        }
        adjacent.retain(|&x| !separated[x]);
        if adjacent.len() <= 1 {
            break;
        }
    }

    let mut targets: Vec<TargetScore> = adjacent
        .into_iter()
        .map(|x| TargetScore {
            series: matrix.series_ref(x).clone(),
            p_value: marginal[x],
        })
        .collect();
    sort_targets(&mut targets);
    Ok((targets, diag))
}

fn sort_targets(targets: &mut [TargetScore]) {
    targets.sort_by(|a, b| {
        a.p_value
            .total_cmp(&b.p_value)
            .then_with(|| a.series.service.cmp(&b.series.service))
            .then_with(|| a.series.indicator.cmp(&b.series.indicator))
    });
}

/// Runs target discovery over randomly chunked series, recursing on the
/// survivors until they fit a single chunk.
///
/// The partition at every level is drawn from one seeded generator before
/// chunks are dispatched, so the result is identical for any thread count.
pub fn rank_chunked(
    series: &[&TimeSeries],
    window: &AnalysisWindow,
    cfg: &CausalConfig,
) -> Result<(Vec<TargetScore>, CausalDiagnostics)> {
    if series.is_empty() {
        return Err(Error::input("rank_chunked needs a nonempty series set"));
    }
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut diag = CausalDiagnostics::default();
    let mut survivors: Vec<usize> = (0..series.len()).collect();

    for _level in 0..MAX_LEVELS {
        if survivors.len() <= cfg.chunk_size {
            let chunk: Vec<&TimeSeries> = survivors.iter().map(|&i| series[i]).collect();
            let (targets, d) = find_targets(&chunk, window, cfg)?;
            diag.merge(&d);
            return Ok((targets, diag));
        }

        let mut order = survivors.clone();
        order.shuffle(&mut rng);
        let chunks: Vec<&[usize]> = order.chunks(cfg.chunk_size).collect();
        let results = parallel::map_slice(&chunks, |chunk_indices| {
            let chunk: Vec<&TimeSeries> = chunk_indices.iter().map(|&i| series[i]).collect();
            find_targets(&chunk, window, cfg)
        });

        let mut next = Vec::new();
        for result in results {
            let (targets, d) = result?;
            diag.merge(&d);
            for t in targets {
                let idx = series
                    .iter()
                    .position(|s| SeriesRef::of(s) == t.series)
                    .expect("target originates from the input set");
                next.push(idx);
            }
        }
        next.sort_unstable();
        next.dedup();

        if next.is_empty() {
            return Ok((Vec::new(), diag));
        }
        if next.len() >= survivors.len() {
            // No reduction this level; re-chunking with fresh draws below.
            if next.len() <= cfg.chunk_size {
                let chunk: Vec<&TimeSeries> = next.iter().map(|&i| series[i]).collect();
                let (targets, d) = find_targets(&chunk, window, cfg)?;
                diag.merge(&d);
                return Ok((targets, diag));
            }
        }
        survivors = next;
    }

    // Level bound reached: score remaining survivors by marginal dependence.
    let chunk: Vec<&TimeSeries> = survivors.iter().map(|&i| series[i]).collect();
    let matrix = RegimeMatrix::build(&chunk, window)?;
    let mut targets = Vec::new();
    for c in 0..matrix.n_cols() {
        let r = pearson(matrix.column(c), matrix.regime());
        let p = z_test(r, matrix.n_rows(), 0);
        if p <= cfg.alpha {
            targets.push(TargetScore {
                series: matrix.series_ref(c).clone(),
                p_value: p,
            });
        }
    }
    sort_targets(&mut targets);
    Ok((targets, diag))
}

/// Lifts series-level targets to a service ranking for one cluster.
///
/// Services owning a targeted series come first, ordered by their best
/// (lowest) p-value; the remaining members follow by mean severity
/// descending. All ties break lexicographically.
pub fn rank_services(
    members: &[String],
    targets: &[TargetScore],
    vectors: &[SeverityVector],
) -> Vec<String> {
    let best_p = |service: &str| -> Option<f64> {
        targets
            .iter()
            .filter(|t| t.series.service == service)
            .map(|t| t.p_value)
            .min_by(f64::total_cmp)
    };
    let severity = |service: &str| -> f64 {
        vectors
            .iter()
            .find(|v| v.service == service)
            .map(|v| v.mean())
            .unwrap_or(0.0)
    };

    let mut targeted: Vec<(f64, &String)> = Vec::new();
    let mut rest: Vec<(f64, &String)> = Vec::new();
    for m in members {
        match best_p(m) {
            Some(p) => targeted.push((p, m)),
            None => rest.push((severity(m), m)),
        }
    }
    targeted.sort_by(|a, b| a.0.total_cmp(&b.0).then_with(|| a.1.cmp(b.1)));
    rest.sort_by(|a, b| b.0.total_cmp(&a.0).then_with(|| a.1.cmp(b.1)));

    targeted
        .into_iter()
        .map(|(_, s)| s.clone())
        .chain(rest.into_iter().map(|(_, s)| s.clone()))
        .collect()
}
