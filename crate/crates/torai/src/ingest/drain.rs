//! Online log-template mining with a fixed-depth prefix tree.
//!
//! Messages are first masked (numbers, hex literals, IPv4 addresses, UUIDs
//! become the wildcard token), then routed through the tree by token count
//! and leading tokens, and finally matched against the leaf's templates by
//! positional token overlap. A match below the similarity threshold starts
//! a new template; a match above it may generalize mismatching positions
//! into wildcards.

use std::collections::BTreeMap;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const WILDCARD: &str = "<*>";

/// Parser parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DrainConfig {
    /// Tree depth including the root and token-count levels; `depth - 2`
    /// leading tokens guide the descent.
    pub depth: usize,
    /// Minimum fraction of positionally equal tokens to join a template.
    pub similarity_threshold: f64,
    /// Maximum distinct children per inner node before routing overflow
    /// into the wildcard branch.
    pub max_children: usize,
}

impl Default for DrainConfig {
    fn default() -> Self {
        DrainConfig {
            depth: 4,
            similarity_threshold: 0.4,
            max_children: 100,
        }
    }
}

impl DrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.depth < 2 {
            return Err(Error::input("drain depth must be at least 2"));
        }
        if !(self.similarity_threshold > 0.0 && self.similarity_threshold < 1.0) {
            return Err(Error::input("similarity threshold must lie in (0, 1)"));
        }
        if self.max_children == 0 {
            return Err(Error::input("max_children must be at least 1"));
        }
        Ok(())
    }
}

/// A mined template: the constant token skeleton with wildcards at
/// variable positions.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LogTemplate {
    pub id: u32,
    pub tokens: Vec<String>,
}

impl LogTemplate {
    pub fn render(&self) -> String {
        self.tokens.join(" ")
    }
}

fn masks() -> &'static [Regex; 4] {
    static MASKS: OnceLock<[Regex; 4]> = OnceLock::new();
    MASKS.get_or_init(|| {
        [
            Regex::new(r"[0-9a-fA-F]{8}-[0-9a-fA-F]{4}-[0-9a-fA-F]{4}-[0-9a-fA-F]{4}-[0-9a-fA-F]{12}")
                .unwrap(),
            Regex::new(r"\b(?:\d{1,3}\.){3}\d{1,3}(?::\d+)?\b").unwrap(),
            Regex::new(r"\b0[xX][0-9a-fA-F]+\b|\b[0-9a-fA-F]{10,}\b").unwrap(),
            Regex::new(r"[-+]?\b\d+(?:\.\d+)?\b").unwrap(),
        ]
    })
}

/// Replaces variable-looking fragments with the wildcard token and splits
/// on whitespace.
pub fn preprocess(message: &str) -> Vec<String> {
    let mut masked = message.to_string();
    for re in masks() {
        masked = re.replace_all(&masked, WILDCARD).into_owned();
    }
    masked.split_whitespace().map(str::to_string).collect()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
enum Node {
    Inner(BTreeMap<String, Node>),
    Leaf(Vec<u32>),
}

/// Per-service parser state. Template ids are assigned in creation order
/// and never change, so replaying the same record sequence reproduces the
/// same ids.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DrainParser {
    cfg: DrainConfig,
    templates: Vec<LogTemplate>,
    root: BTreeMap<usize, Node>,
    /// Messages skipped because masking left no tokens.
    pub skipped: u64,
}

impl DrainParser {
    pub fn new(cfg: DrainConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(DrainParser {
            cfg,
            templates: Vec::new(),
            root: BTreeMap::new(),
            skipped: 0,
        })
    }

    pub fn templates(&self) -> &[LogTemplate] {
        &self.templates
    }

    pub fn template(&self, id: u32) -> &LogTemplate {
        &self.templates[id as usize]
    }

    /// Parses one message, returning its template id, or None when the
    /// message carries no constant content after masking (counted in
    /// `skipped`).
    pub fn parse(&mut self, message: &str) -> Option<u32> {
        let tokens = preprocess(message);
        if tokens.is_empty() || tokens.iter().all(|t| t == WILDCARD) {
            self.skipped += 1;
            return None;
        }

        let guide_len = (self.cfg.depth - 2).min(tokens.len());
        let max_children = self.cfg.max_children;
        let mut node = self
            .root
            .entry(tokens.len())
            .or_insert_with(|| new_node(guide_len == 0));
        for d in 0..guide_len {
            let key = route_key(&tokens[d], node, max_children);
            let leaf_next = d + 1 == guide_len;
            node = match node {
                Node::Inner(children) => children
                    .entry(key)
                    .or_insert_with(|| new_node(leaf_next)),
                Node::Leaf(_) => unreachable!("descent stops at leaves"),
            };
        }

        let Node::Leaf(ids) = node else {
            unreachable!("descent ends on a leaf")
        };

        let mut best: Option<(f64, u32)> = None;
        for &id in ids.iter() {
            let sim = similarity(&self.templates[id as usize].tokens, &tokens);
            if best.map_or(true, |(s, _)| sim > s) {
                best = Some((sim, id));
            }
        }

        match best {
            Some((sim, id)) if sim >= self.cfg.similarity_threshold => {
                let tpl = &mut self.templates[id as usize];
                for (slot, token) in tpl.tokens.iter_mut().zip(tokens.iter()) {
                    if slot != token && slot != WILDCARD {
                        *slot = WILDCARD.to_string();
                    }
                }
                Some(id)
            }
            _ => {
                let id = self.templates.len() as u32;
                self.templates.push(LogTemplate { id, tokens });
                ids.push(id);
                Some(id)
            }
        }
    }
}

fn new_node(leaf: bool) -> Node {
    if leaf {
        Node::Leaf(Vec::new())
    } else {
        Node::Inner(BTreeMap::new())
    }
}

/// Tokens containing digits route to the wildcard branch, as does overflow
/// once an inner node is full.
fn route_key(token: &str, node: &Node, max_children: usize) -> String {
    if token.chars().any(|c| c.is_ascii_digit()) {
        return WILDCARD.to_string();
    }
    if let Node::Inner(children) = node {
        if !children.contains_key(token) && children.len() >= max_children {
            return WILDCARD.to_string();
        }
    }
    token.to_string()
}

/// Fraction of positions with exactly equal tokens.
fn similarity(template: &[String], tokens: &[String]) -> f64 {
    debug_assert_eq!(template.len(), tokens.len());
    let hits = template
        .iter()
        .zip(tokens.iter())
        .filter(|(a, b)| a == b)
        .count();
    hits as f64 / template.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parser() -> DrainParser {
        DrainParser::new(DrainConfig::default()).unwrap()
    }

    #[test]
    fn variables_merge_into_one_template() {
        let mut p = parser();
        let a = p.parse("connected to 10.0.0.1 port 8080").unwrap();
        let b = p.parse("connected to 10.0.0.2 port 9090").unwrap();
        assert_eq!(a, b);
        assert_eq!(p.template(a).render(), "connected to <*> port <*>");
    }

    #[test]
    fn identical_messages_are_idempotent() {
        let mut p = parser();
        let a = p.parse("database deadlock detected").unwrap();
        let b = p.parse("database deadlock detected").unwrap();
        assert_eq!(a, b);
        assert_eq!(p.templates().len(), 1);
    }

    #[test]
    fn dissimilar_messages_get_distinct_templates() {
        let mut p = parser();
        let a = p.parse("GET /cart 200").unwrap();
        let b = p.parse("database deadlock detected").unwrap();
        assert_ne!(a, b);
    }

    #[test]
    fn empty_after_masking_is_skipped() {
        let mut p = parser();
        assert_eq!(p.parse("12345 67.89"), None);
        assert_eq!(p.skipped, 1);
        assert_eq!(p.parse("   "), None);
        assert_eq!(p.skipped, 2);
    }

    #[test]
    fn masking_covers_uuid_hex_ip_and_numbers() {
        let tokens = preprocess("req 550e8400-e29b-41d4-a716-446655440000 from 192.168.0.1:443 buf 0xdeadbeef size 42.5");
        assert_eq!(
            tokens.join(" "),
            "req <*> from <*> buf <*> size <*>"
        );
    }

    #[test]
    fn replay_reproduces_ids() {
        let lines = [
            "worker 3 started job 77",
            "worker 5 started job 12",
            "cache miss for key abc",
            "worker 9 started job 1",
            "cache miss for key xyz",
        ];
        let run = |lines: &[&str]| -> Vec<u32> {
            let mut p = parser();
            lines.iter().map(|l| p.parse(l).unwrap()).collect()
        };
        assert_eq!(run(&lines), run(&lines));
    }

    #[test]
    fn template_count_bounded_by_distinct_masked_messages() {
        let mut p = parser();
        let mut distinct = std::collections::BTreeSet::new();
        for i in 0..50 {
            let msg = format!("event {} of kind {}", i, i % 3);
            distinct.insert(preprocess(&msg).join(" "));
            p.parse(&msg);
        }
        assert!(p.templates().len() <= distinct.len());
    }
}
