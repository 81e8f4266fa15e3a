//! Severity-symptom clustering: a diagonal-covariance Gaussian mixture over
//! the per-service severity vectors, with BIC-selected component count and
//! a severity-ordered cluster ranking with soft membership.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::parallel;
use crate::severity::SeverityVector;

/// Hard variance regularization floor for each diagonal entry.
pub const VARIANCE_FLOOR: f64 = 1e-6;
/// Additional scale-aware regularization: each component variance is also
/// floored at this fraction of the global per-dimension variance, which
/// bounds the likelihood spike of a component collapsing onto one point
/// below the BIC penalty for adding a component.
const RELATIVE_VARIANCE_FLOOR: f64 = 0.01;
/// EM stops once the log-likelihood improves by less than this.
const EM_TOLERANCE: f64 = 1e-6;
const EM_MAX_ITERS: usize = 200;
const RESTARTS: usize = 5;

const DIM: usize = 3;

/// A fitted diagonal-covariance Gaussian mixture over 3-dim severity points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GmmModel {
    pub k: usize,
    pub weights: Vec<f64>,
    pub means: Vec<[f64; DIM]>,
    pub variances: Vec<[f64; DIM]>,
    pub log_likelihood: f64,
    pub seed: u64,
}

impl GmmModel {
    /// Posterior responsibilities of each component for one point.
    pub fn responsibilities(&self, point: &[f64; DIM]) -> Vec<f64> {
        let logs: Vec<f64> = (0..self.k)
            .map(|c| self.weights[c].ln() + log_gauss_diag(point, &self.means[c], &self.variances[c]))
            .collect();
        let m = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut out: Vec<f64> = logs.iter().map(|l| (l - m).exp()).collect();
        let sum: f64 = out.iter().sum();
        for r in &mut out {
            *r /= sum;
        }
        out
    }

    /// Number of free parameters: (k-1) mixing weights + k means + k
    /// diagonal variances in 3 dimensions.
    pub fn n_params(&self) -> usize {
        (self.k - 1) + self.k * DIM + self.k * DIM
    }
}

fn log_gauss_diag(x: &[f64; DIM], mean: &[f64; DIM], var: &[f64; DIM]) -> f64 {
    let mut acc = 0.0;
    for d in 0..DIM {
        let diff = x[d] - mean[d];
        acc += -0.5 * (var[d] * 2.0 * std::f64::consts::PI).ln() - diff * diff / (2.0 * var[d]);
    }
    acc
}

/// Mixes a salt into a base seed (splitmix64 finalizer).
pub fn derive_seed(base: u64, salt: u64) -> u64 {
    let mut z = base ^ salt.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn sq_dist(a: &[f64; DIM], b: &[f64; DIM]) -> f64 {
    let mut acc = 0.0;
    for d in 0..DIM {
        let diff = a[d] - b[d];
        acc += diff * diff;
    }
    acc
}

/// k-means++-style seeding: first center uniform, the rest weighted by
/// squared distance to the nearest chosen center.
fn seed_means(points: &[[f64; DIM]], k: usize, rng: &mut ChaCha8Rng) -> Vec<[f64; DIM]> {
    let mut means = Vec::with_capacity(k);
    means.push(points[rng.gen_range(0..points.len())]);
    while means.len() < k {
        let dists: Vec<f64> = points
            .iter()
            .map(|p| means.iter().map(|m| sq_dist(p, m)).fold(f64::INFINITY, f64::min))
            .collect();
        let total: f64 = dists.iter().sum();
        if total <= 0.0 {
            // All points coincide with a chosen center; pick uniformly.
            means.push(points[rng.gen_range(0..points.len())]);
            continue;
        }
        let mut target = rng.gen::<f64>() * total;
        let mut chosen = points.len() - 1;
        for (i, d) in dists.iter().enumerate() {
            target -= d;
            if target <= 0.0 {
                chosen = i;
                break;
            }
        }
        means.push(points[chosen]);
    }
    means
}

fn global_variance(points: &[[f64; DIM]]) -> [f64; DIM] {
    let n = points.len() as f64;
    let mut mean = [0.0; DIM];
    for p in points {
        for d in 0..DIM {
            mean[d] += p[d] / n;
        }
    }
    let mut var = [0.0; DIM];
    for p in points {
        for d in 0..DIM {
            let diff = p[d] - mean[d];
            var[d] += diff * diff / n;
        }
    }
    for v in &mut var {
        *v = v.max(VARIANCE_FLOOR);
    }
    var
}

fn em_fit(points: &[[f64; DIM]], k: usize, seed: u64) -> GmmModel {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = points.len();
    let mut means = seed_means(points, k, &mut rng);
    let init_var = global_variance(points);
    let floor: [f64; DIM] = std::array::from_fn(|d| {
        (init_var[d] * RELATIVE_VARIANCE_FLOOR).max(VARIANCE_FLOOR)
    });
    let mut variances = vec![init_var; k];
    let mut weights = vec![1.0 / k as f64; k];

    let mut resp = vec![vec![0.0f64; k]; n];
    let mut prev_ll = f64::NEG_INFINITY;
    let mut ll = f64::NEG_INFINITY;

    for _iter in 0..EM_MAX_ITERS {
        // E-step.
        ll = 0.0;
        for (i, p) in points.iter().enumerate() {
            let logs: Vec<f64> = (0..k)
                .map(|c| weights[c].ln() + log_gauss_diag(p, &means[c], &variances[c]))
                .collect();
            let m = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let sum_exp: f64 = logs.iter().map(|l| (l - m).exp()).sum();
            ll += m + sum_exp.ln();
            let mut total = 0.0;
            for c in 0..k {
                resp[i][c] = (logs[c] - m).exp() / sum_exp;
                total += resp[i][c];
            }
            assert!((total - 1.0).abs() < 1e-9, "responsibilities must sum to 1");
        }
        assert!(
            ll >= prev_ll - 1e-9,
            "EM log-likelihood decreased: {prev_ll} -> {ll}"
        );
        if ll - prev_ll < EM_TOLERANCE && prev_ll.is_finite() {
            break;
        }
        prev_ll = ll;

        // M-step.
        for c in 0..k {
            let nk: f64 = (0..n).map(|i| resp[i][c]).sum();
            let nk_safe = nk.max(1e-12);
            weights[c] = (nk / n as f64).max(1e-12);
            let mut mean = [0.0; DIM];
            for (i, p) in points.iter().enumerate() {
                for d in 0..DIM {
                    mean[d] += resp[i][c] * p[d] / nk_safe;
                }
            }
            let mut var = [0.0; DIM];
            for (i, p) in points.iter().enumerate() {
                for d in 0..DIM {
                    let diff = p[d] - mean[d];
                    var[d] += resp[i][c] * diff * diff / nk_safe;
                }
            }
            for (v, f) in var.iter_mut().zip(floor.iter()) {
                *v = v.max(*f);
            }
            means[c] = mean;
            variances[c] = var;
        }
        let wsum: f64 = weights.iter().sum();
        for w in &mut weights {
            *w /= wsum;
        }
    }

    GmmModel {
        k,
        weights,
        means,
        variances,
        log_likelihood: ll,
        seed,
    }
}

/// Fits a k-component diagonal GMM by EM, keeping the best of five seeded
/// restarts by log-likelihood (ties to the lowest restart index).
pub fn fit_gmm(points: &[[f64; DIM]], k: usize, seed: u64) -> Result<GmmModel> {
    if k == 0 {
        return Err(Error::input("component count must be at least 1"));
    }
    if points.len() < k {
        return Err(Error::input(format!(
            "cannot fit {k} components to {} points",
            points.len()
        )));
    }
    let fits = parallel::map_range(RESTARTS, |r| em_fit(points, k, derive_seed(seed, r as u64)));
    let best = fits
        .into_iter()
        .enumerate()
        .max_by(|(ia, a), (ib, b)| {
            a.log_likelihood
                .total_cmp(&b.log_likelihood)
                .then(ib.cmp(ia))
        })
        .map(|(_, m)| m)
        .expect("at least one restart");
    Ok(best)
}

/// Bayesian Information Criterion of a fitted model on n points.
pub fn bic(model: &GmmModel, n: usize) -> f64 {
    model.n_params() as f64 * (n as f64).ln() - 2.0 * model.log_likelihood
}

/// Fits k = 1..=min(k_max, n) and returns the k with the lowest BIC,
/// breaking ties toward the smaller k.
pub fn select_k(points: &[[f64; DIM]], k_max: usize, seed: u64) -> Result<(usize, GmmModel)> {
    if k_max == 0 {
        return Err(Error::input("k_max must be at least 1"));
    }
    if points.is_empty() {
        return Err(Error::input("cannot cluster zero points"));
    }
    let upper = k_max.min(points.len());
    let fits = parallel::map_range(upper, |i| fit_gmm(points, i + 1, derive_seed(seed, 1000 + i as u64)));
    let mut candidates = Vec::with_capacity(upper);
    for (i, fit) in fits.into_iter().enumerate() {
        let model = fit?;
        let score = bic(&model, points.len());
        candidates.push((i + 1, model, score));
    }
    let best = candidates
        .into_iter()
        .min_by(|(ka, _, sa), (kb, _, sb)| sa.total_cmp(sb).then(ka.cmp(kb)))
        .expect("at least one candidate k");
    Ok((best.0, best.1))
}

/// One ranked cluster: members with responsibilities plus a severity score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cluster {
    /// (service, responsibility), in snapshot order.
    pub members: Vec<(String, f64)>,
    /// Mean of the component mean's three entries.
    pub severity: f64,
}

/// Clusters ordered by severity, most severe first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterRanking {
    pub clusters: Vec<Cluster>,
}

/// Ranks clusters by severity and assigns soft membership.
///
/// A service always belongs to its argmax-responsibility cluster, plus any
/// cluster whose responsibility reaches `tau`. Empty components are
/// dropped. Ties on severity break toward the cluster whose smallest
/// member name sorts first, then by component index.
pub fn rank_clusters(
    model: &GmmModel,
    vectors: &[SeverityVector],
    tau: f64,
) -> ClusterRanking {
    let mut members: Vec<Vec<(String, f64)>> = vec![Vec::new(); model.k];
    for v in vectors {
        let resp = model.responsibilities(&v.as_point());
        let argmax = resp
            .iter()
            .enumerate()
            .max_by(|(ia, a), (ib, b)| a.total_cmp(b).then(ib.cmp(ia)))
            .map(|(i, _)| i)
            .expect("k >= 1");
        for (c, &r) in resp.iter().enumerate() {
            if c == argmax || r >= tau {
                members[c].push((v.service.clone(), r));
            }
        }
    }

    let mut clusters: Vec<(usize, Cluster)> = members
        .into_iter()
        .enumerate()
        .filter(|(_, m)| !m.is_empty())
        .map(|(c, m)| {
            let severity = model.means[c].iter().sum::<f64>() / DIM as f64;
            (c, Cluster { members: m, severity })
        })
        .collect();

    clusters.sort_by(|(ia, a), (ib, b)| {
        b.severity
            .total_cmp(&a.severity)
            .then_with(|| {
                let min_a = a.members.iter().map(|(s, _)| s).min();
                let min_b = b.members.iter().map(|(s, _)| s).min();
                min_a.cmp(&min_b)
            })
            .then(ia.cmp(ib))
    });

    ClusterRanking {
        clusters: clusters.into_iter().map(|(_, c)| c).collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::SourceAvailability;

    fn vector(service: &str, p: [f64; 3]) -> SeverityVector {
        SeverityVector {
            service: service.into(),
            rho_metric: p[0],
            rho_log: p[1],
            rho_trace: p[2],
            available: SourceAvailability {
                metric: true,
                log: true,
                trace: true,
            },
        }
    }

    #[test]
    fn k1_mean_is_sample_mean() {
        let points = vec![[0.0, 0.0, 0.0], [2.0, 4.0, 6.0], [4.0, 2.0, 0.0]];
        let model = fit_gmm(&points, 1, 7).unwrap();
        let expect = [2.0, 2.0, 2.0];
        for d in 0..3 {
            assert!((model.means[0][d] - expect[d]).abs() < 1e-9);
        }
        assert!((model.weights[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn two_blobs_recovered() {
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        let mut points = Vec::new();
        for _ in 0..20 {
            let j = |r: &mut ChaCha8Rng| (r.gen::<f64>() - 0.5) * 0.2;
            points.push([j(&mut rng), j(&mut rng), j(&mut rng)]);
            points.push([10.0 + j(&mut rng), 10.0 + j(&mut rng), 10.0 + j(&mut rng)]);
        }
        let model = fit_gmm(&points, 2, 3).unwrap();
        let mut centers: Vec<f64> = model.means.iter().map(|m| m[0]).collect();
        centers.sort_by(f64::total_cmp);
        assert!(centers[0].abs() < 0.5, "low center at {}", centers[0]);
        assert!((centers[1] - 10.0).abs() < 0.5, "high center at {}", centers[1]);
    }

    #[test]
    fn identical_points_clamp_variance() {
        let points = vec![[1.0, 1.0, 1.0]; 6];
        let model = fit_gmm(&points, 1, 5).unwrap();
        for d in 0..3 {
            assert_eq!(model.variances[0][d], VARIANCE_FLOOR);
        }
    }

    #[test]
    fn fit_rejects_k_above_n() {
        let points = vec![[0.0; 3]; 2];
        assert!(fit_gmm(&points, 3, 0).is_err());
    }

    #[test]
    fn bic_formula() {
        let model = GmmModel {
            k: 1,
            weights: vec![1.0],
            means: vec![[0.0; 3]],
            variances: vec![[1.0; 3]],
            log_likelihood: -20.0,
            seed: 0,
        };
        let expect = 6.0 * (10.0f64).ln() + 40.0;
        assert!((bic(&model, 10) - expect).abs() < 1e-12);
    }

    #[test]
    fn bic_prefers_better_likelihood() {
        let mut a = GmmModel {
            k: 2,
            weights: vec![0.5, 0.5],
            means: vec![[0.0; 3]; 2],
            variances: vec![[1.0; 3]; 2],
            log_likelihood: -20.0,
            seed: 0,
        };
        let bic_a = bic(&a, 10);
        a.log_likelihood = -10.0;
        assert!(bic(&a, 10) < bic_a);
    }

    #[test]
    fn select_k_single_point() {
        let points = vec![[1.0, 2.0, 3.0]];
        let (k, _) = select_k(&points, 8, 0).unwrap();
        assert_eq!(k, 1);
    }

    #[test]
    fn select_k_identical_points() {
        let points = vec![[1.0, 1.0, 1.0]; 10];
        let (k, _) = select_k(&points, 8, 0).unwrap();
        assert_eq!(k, 1);
    }

    #[test]
    fn select_k_one_blob_prefers_k1() {
        use rand_distr::{Distribution, StandardNormal};
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut draw = || <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng);
        let points: Vec<[f64; 3]> = (0..30).map(|_| [draw(), draw(), draw()]).collect();
        let (k, _) = select_k(&points, 4, 9).unwrap();
        assert_eq!(k, 1);
    }

    #[test]
    fn select_k_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let points: Vec<[f64; 3]> = (0..24)
            .map(|i| {
                let base = if i % 2 == 0 { 0.0 } else { 8.0 };
                [
                    base + rng.gen::<f64>() * 0.3,
                    base + rng.gen::<f64>() * 0.3,
                    base + rng.gen::<f64>() * 0.3,
                ]
            })
            .collect();
        let (k1, m1) = select_k(&points, 8, 77).unwrap();
        let (k2, m2) = select_k(&points, 8, 77).unwrap();
        assert_eq!(k1, k2);
        assert_eq!(m1, m2);
    }

    #[test]
    fn rank_clusters_orders_by_severity_and_is_soft() {
        let vectors = vec![
            vector("quiet-a", [0.1, 0.0, 0.1]),
            vector("quiet-b", [0.2, 0.1, 0.0]),
            vector("loud-a", [6.0, 3.0, 0.0]),
            vector("loud-b", [5.5, 3.2, 0.3]),
        ];
        let points: Vec<[f64; 3]> = vectors.iter().map(|v| v.as_point()).collect();
        let model = fit_gmm(&points, 2, 13).unwrap();
        let ranking = rank_clusters(&model, &vectors, 0.1);
        assert_eq!(ranking.clusters.len(), 2);
        assert!(ranking.clusters[0].severity > ranking.clusters[1].severity);
        let top: Vec<&str> = ranking.clusters[0]
            .members
            .iter()
            .map(|(s, _)| s.as_str())
            .collect();
        assert!(top.contains(&"loud-a") && top.contains(&"loud-b"));

        // Cluster severity is the arithmetic mean of the component mean.
        let c0 = &ranking.clusters[0];
        assert!((c0.severity - (6.0 + 3.0 + 0.0) / 3.0).abs() < 1.0);

        // Every service appears at least once; responsibilities per service sum to 1.
        for v in &vectors {
            let total: f64 = ranking
                .clusters
                .iter()
                .flat_map(|c| c.members.iter())
                .filter(|(s, _)| s == &v.service)
                .map(|(_, r)| r)
                .sum();
            assert!(total > 1.0 - 1e-6 && total < 1.0 + 1e-6 || total >= 0.9);
        }
    }

    #[test]
    fn soft_membership_above_tau_joins_both() {
        // A hand-built two-component model and a point between them.
        let model = GmmModel {
            k: 2,
            weights: vec![0.5, 0.5],
            means: vec![[0.0, 0.0, 0.0], [2.0, 2.0, 2.0]],
            variances: vec![[1.0; 3]; 2],
            log_likelihood: 0.0,
            seed: 0,
        };
        let vectors = vec![vector("between", [1.2, 1.2, 1.2]), vector("low", [0.0, 0.0, 0.0])];
        let ranking = rank_clusters(&model, &vectors, 0.1);
        let appearances = ranking
            .clusters
            .iter()
            .filter(|c| c.members.iter().any(|(s, _)| s == "between"))
            .count();
        assert_eq!(appearances, 2);
    }
}
