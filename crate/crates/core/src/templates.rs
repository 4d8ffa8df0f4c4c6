//! Drain-style template mining and similarity-pair sampling.

use std::collections::{BTreeMap, HashMap, HashSet};

use rand::Rng as _;
use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::corpus::LogRecord;
use crate::seed;

pub const WILDCARD: &str = "<*>";

#[derive(Debug, thiserror::Error)]
pub enum TemplateError {
    #[error("invalid drain config: {0}")]
    BadConfig(String),
    #[error("invalid mask pattern {pattern:?}: {source}")]
    BadMask {
        pattern: String,
        #[source]
        source: regex::Error,
    },
    #[error("requested {requested} {kind} pairs but only {available} exist")]
    InsufficientDiversity {
        kind: &'static str,
        requested: usize,
        available: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DrainConfig {
    pub depth: usize,
    pub similarity_threshold: f64,
    pub max_children: usize,
    /// Regexes whose matches are replaced by the wildcard before
    /// tokenization. Empty by default.
    pub masks: Vec<String>,
}

impl Default for DrainConfig {
    fn default() -> Self {
        Self {
            depth: 4,
            similarity_threshold: 0.4,
            max_children: 100,
            masks: Vec::new(),
        }
    }
}

impl DrainConfig {
    pub fn validate(&self) -> Result<(), TemplateError> {
        if self.depth < 3 {
            return Err(TemplateError::BadConfig("depth must be at least 3".into()));
        }
        if !(self.similarity_threshold > 0.0 && self.similarity_threshold <= 1.0) {
            return Err(TemplateError::BadConfig("similarity_threshold must be in (0, 1]".into()));
        }
        if self.max_children < 2 {
            return Err(TemplateError::BadConfig("max_children must be at least 2".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Template {
    pub id: String,
    pub tokens: Vec<String>,
    pub size: usize,
}

impl Template {
    pub fn text(&self) -> String {
        self.tokens.join(" ")
    }
}

#[derive(Debug, Clone, Default)]
struct Node {
    children: BTreeMap<String, Node>,
    clusters: Vec<usize>,
}

/// Mined templates and per-log assignments.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TemplateIndex {
    pub config: DrainConfig,
    pub templates: Vec<Template>,
    /// Log id to template id, in input order.
    pub assignments: Vec<(String, String)>,
    pub skipped_empty: usize,
    #[serde(skip)]
    tree: BTreeMap<usize, Node>,
    #[serde(skip)]
    masks: Vec<Regex>,
}

fn has_digit(token: &str) -> bool {
    token.bytes().any(|b| b.is_ascii_digit())
}

/// Equal-position fraction and wildcard count of a template against a log.
fn similarity(template: &[String], tokens: &[&str]) -> (f64, usize) {
    let mut equal = 0;
    let mut wild = 0;
    for (t, tok) in template.iter().zip(tokens) {
        if t == WILDCARD {
            wild += 1;
        } else if t == tok {
            equal += 1;
        }
    }
    (equal as f64 / tokens.len() as f64, wild)
}

impl TemplateIndex {
    pub fn new(config: DrainConfig) -> Result<Self, TemplateError> {
        config.validate()?;
        let masks = config
            .masks
            .iter()
            .map(|p| {
                Regex::new(p).map_err(|source| TemplateError::BadMask {
                    pattern: p.clone(),
                    source,
                })
            })
            .collect::<Result<_, _>>()?;
        Ok(Self {
            config,
            templates: Vec::new(),
            assignments: Vec::new(),
            skipped_empty: 0,
            tree: BTreeMap::new(),
            masks,
        })
    }

    fn preprocess(&self, raw: &str) -> String {
        let mut text = raw.to_string();
        for m in &self.masks {
            text = m.replace_all(&text, WILDCARD).into_owned();
        }
        text
    }

    /// Routing keys below the length level.
    fn route<'a>(&self, tokens: &[&'a str]) -> Vec<&'a str> {
        tokens
            .iter()
            .take(self.config.depth - 2)
            .map(|t| if has_digit(t) { WILDCARD } else { *t })
            .collect()
    }

    fn leaf(&self, tokens: &[&str]) -> Option<&Node> {
        let mut node = self.tree.get(&tokens.len())?;
        for key in self.route(tokens) {
            node = node.children.get(key).or_else(|| node.children.get(WILDCARD))?;
        }
        Some(node)
    }

    fn best_cluster(&self, leaf: &Node, tokens: &[&str]) -> Option<usize> {
        let mut best: Option<(usize, f64, usize)> = None;
        for &c in &leaf.clusters {
            let (sim, wild) = similarity(&self.templates[c].tokens, tokens);
            let better = match best {
                None => true,
                Some((_, s, w)) => sim > s || (sim == s && wild > w),
            };
            if better {
                best = Some((c, sim, wild));
            }
        }
        best.filter(|&(_, s, _)| s >= self.config.similarity_threshold)
            .map(|(c, _, _)| c)
    }

    /// Template id an unseen log would join, without modifying the index.
    pub fn match_log(&self, raw: &str) -> Option<&str> {
        let text = self.preprocess(raw);
        let tokens: Vec<&str> = text.split_whitespace().collect();
        if tokens.is_empty() {
            return None;
        }
        let leaf = self.leaf(&tokens)?;
        self.best_cluster(leaf, &tokens).map(|c| self.templates[c].id.as_str())
    }

    /// Add one log, returning its template id (None for empty logs).
    pub fn add(&mut self, log_id: &str, raw: &str) -> Option<String> {
        let text = self.preprocess(raw);
        let tokens: Vec<&str> = text.split_whitespace().collect();
        if tokens.is_empty() {
            self.skipped_empty += 1;
            return None;
        }
        let max_children = self.config.max_children;
        let route = self.route(&tokens);
        let mut node = self.tree.entry(tokens.len()).or_default();
        for &key in &route {
            let key = if node.children.contains_key(key)
                || (key != WILDCARD && node.children.len() + 1 < max_children)
            {
                key
            } else {
                WILDCARD
            };
            node = node.children.entry(key.to_string()).or_default();
        }
        let leaf = node.clone();
        let cluster = match self.best_cluster(&leaf, &tokens) {
            Some(c) => {
                let template = &mut self.templates[c];
                for (t, tok) in template.tokens.iter_mut().zip(&tokens) {
                    if t != tok {
                        *t = WILDCARD.to_string();
                    }
                }
                template.size += 1;
                c
            }
            None => {
                let c = self.templates.len();
                self.templates.push(Template {
                    id: format!("T{c}"),
                    tokens: tokens.iter().map(|t| t.to_string()).collect(),
                    size: 1,
                });
                let mut node = self.tree.get_mut(&tokens.len()).expect("created above");
                for key in route {
                    node = if node.children.contains_key(key) {
                        node.children.get_mut(key).expect("checked")
                    } else {
                        node.children.get_mut(WILDCARD).expect("created during routing")
                    };
                }
                node.clusters.push(c);
                c
            }
        };
        let id = self.templates[cluster].id.clone();
        self.assignments.push((log_id.to_string(), id.clone()));
        Some(id)
    }

    pub fn template(&self, id: &str) -> Option<&Template> {
        self.templates.iter().find(|t| t.id == id)
    }

    pub fn assignment_map(&self) -> HashMap<&str, &str> {
        self.assignments
            .iter()
            .map(|(l, t)| (l.as_str(), t.as_str()))
            .collect()
    }
}

/// Parse logs in order. Empty logs are skipped and counted.
pub fn drain_parse(logs: &[LogRecord], config: &DrainConfig) -> Result<TemplateIndex, TemplateError> {
    let mut index = TemplateIndex::new(config.clone())?;
    for log in logs {
        index.add(&log.id, &log.raw);
    }
    Ok(index)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SimilarityPairs {
    pub positive: Vec<(String, String)>,
    pub negative: Vec<(String, String)>,
}

/// Sample distinct within-template (positive) and cross-template (negative)
/// log pairs.
pub fn make_similarity_pairs(
    index: &TemplateIndex,
    n_pos: usize,
    n_neg: usize,
    seed_value: u64,
) -> Result<SimilarityPairs, TemplateError> {
    let mut groups: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
    for (log, template) in &index.assignments {
        groups.entry(template.as_str()).or_default().push(log.as_str());
    }
    let logs: Vec<(&str, usize)> = groups
        .values()
        .enumerate()
        .flat_map(|(g, members)| members.iter().map(move |m| (*m, g)))
        .collect();
    let sizes: Vec<usize> = groups.values().map(Vec::len).collect();
    let pos_pool: usize = sizes.iter().map(|n| n * n.saturating_sub(1) / 2).sum();
    let all = logs.len() * logs.len().saturating_sub(1) / 2;
    let neg_pool = all - pos_pool;
    if n_pos > pos_pool {
        return Err(TemplateError::InsufficientDiversity {
            kind: "positive",
            requested: n_pos,
            available: pos_pool,
        });
    }
    if n_neg > neg_pool {
        return Err(TemplateError::InsufficientDiversity {
            kind: "negative",
            requested: n_neg,
            available: neg_pool,
        });
    }

    let pair = |i: usize, j: usize| (logs[i.min(j)].0.to_string(), logs[i.max(j)].0.to_string());
    let mut starts = Vec::with_capacity(sizes.len());
    let mut offset = 0;
    for &n in &sizes {
        starts.push(offset);
        offset += n;
    }

    let sample = |want: usize, pool: usize, same: bool, rng: &mut seed::Rng| -> Vec<(String, String)> {
        if want == 0 {
            return Vec::new();
        }
        // Dense requests enumerate the pool; sparse ones use rejection.
        if want * 2 >= pool {
            let mut pool: Vec<(usize, usize)> = (0..logs.len())
                .flat_map(|i| (i + 1..logs.len()).map(move |j| (i, j)))
                .filter(|&(i, j)| (logs[i].1 == logs[j].1) == same)
                .collect();
            for k in 0..want {
                let r = rng.random_range(k..pool.len());
                pool.swap(k, r);
            }
            return pool[..want].iter().map(|&(i, j)| pair(i, j)).collect();
        }
        let weights: Vec<usize> = sizes.iter().map(|n| n * n.saturating_sub(1) / 2).collect();
        let total: usize = weights.iter().sum();
        let mut seen = HashSet::new();
        let mut out = Vec::with_capacity(want);
        while out.len() < want {
            let (i, j) = if same {
                let mut r = rng.random_range(0..total);
                let g = weights
                    .iter()
                    .position(|&w| {
                        if r < w {
                            true
                        } else {
                            r -= w;
                            false
                        }
                    })
                    .expect("weights sum to total");
                let i = rng.random_range(0..sizes[g]);
                let mut j = rng.random_range(0..sizes[g] - 1);
                if j >= i {
                    j += 1;
                }
                (starts[g] + i, starts[g] + j)
            } else {
                let i = rng.random_range(0..logs.len());
                let j = rng.random_range(0..logs.len());
                if logs[i].1 == logs[j].1 {
                    continue;
                }
                (i, j)
            };
            if seen.insert((i.min(j), i.max(j))) {
                out.push(pair(i, j));
            }
        }
        out
    };

    let positive = sample(n_pos, pos_pool, true, &mut seed::named_rng(seed_value, "pairs-positive"));
    let negative = sample(n_neg, neg_pool, false, &mut seed::named_rng(seed_value, "pairs-negative"));
    Ok(SimilarityPairs { positive, negative })
}
