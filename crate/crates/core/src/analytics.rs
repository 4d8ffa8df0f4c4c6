//! Applications over log embeddings: pair similarity, template search,
//! diversity subsampling, isolation-forest anomaly scoring, KNN triage and
//! top-k retrieval.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet, HashMap};

use rand::seq::index;
use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::LogRecord;
use crate::encoder::{Embedding, EncoderError, EncoderModel};
use crate::tokenizer::TokenizerModel;
use crate::metrics::RankedResult;
use crate::seed;

#[derive(Debug, thiserror::Error)]
pub enum AnalyticsError {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("no embedding for {0:?}")]
    MissingEmbedding(String),
    #[error("invalid parameter: {0}")]
    BadParameter(String),
    #[error("need at least 2 rows, found {0}")]
    TooFewRows(usize),
    #[error("training set is empty")]
    EmptyTrain,
    #[error("length mismatch: {0}")]
    LengthMismatch(String),
    #[error(transparent)]
    Encoder(#[from] EncoderError),
}

fn bad(msg: impl Into<String>) -> AnalyticsError {
    AnalyticsError::BadParameter(msg.into())
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Mean-pooled embeddings of `(id, text)` pairs, truncated to the model's
/// context length. Empty texts map to the zero vector.
pub fn embed_texts(
    model: &EncoderModel,
    tokenizer: &TokenizerModel,
    items: &[(String, String)],
) -> Result<Vec<Embedding>, AnalyticsError> {
    let max_len = model.config.max_seq_len;
    Ok(items
        .par_iter()
        .map(|(id, text)| {
            if text.is_empty() {
                return Ok(Embedding {
                    source_id: id.clone(),
                    vector: vec![0.0; model.config.hidden_dim],
                });
            }
            model.embed(id, &tokenizer.encode_for_model(text.as_bytes(), max_len).ids)
        })
        .collect::<Result<Vec<_>, _>>()?)
}

pub fn embed_records(
    model: &EncoderModel,
    tokenizer: &TokenizerModel,
    records: &[LogRecord],
) -> Result<Vec<Embedding>, AnalyticsError> {
    let items: Vec<(String, String)> = records.iter().map(|r| (r.id.clone(), r.raw.clone())).collect();
    embed_texts(model, tokenizer, &items)
}

/// Cosine similarity, or None when either vector is zero.
pub fn cosine(a: &[f64], b: &[f64]) -> Option<f64> {
    let n = norm(a) * norm(b);
    (n > 0.0).then(|| dot(a, b) / n)
}

pub fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

fn check_dims<'a>(expected: usize, vectors: impl IntoIterator<Item = &'a [f64]>) -> Result<(), AnalyticsError> {
    for v in vectors {
        if v.len() != expected {
            return Err(AnalyticsError::DimensionMismatch {
                expected,
                found: v.len(),
            });
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarityReport {
    pub pmean: f64,
    pub nmean: f64,
    /// `pmean - nmean`.
    pub diff: f64,
    pub positive_count: usize,
    pub negative_count: usize,
    /// Pairs dropped because a vector was zero.
    pub excluded: usize,
}

/// Mean cosine similarity of positive pairs minus that of negative pairs.
pub fn similarity_diff(
    embeddings: &HashMap<String, Vec<f64>>,
    positive: &[(String, String)],
    negative: &[(String, String)],
) -> Result<SimilarityReport, AnalyticsError> {
    let lookup = |id: &String| {
        embeddings
            .get(id)
            .ok_or_else(|| AnalyticsError::MissingEmbedding(id.clone()))
    };
    let mut excluded = 0;
    let mut mean = |pairs: &[(String, String)]| -> Result<(f64, usize), AnalyticsError> {
        let mut sum = 0.0;
        let mut count = 0;
        for (a, b) in pairs {
            match cosine(lookup(a)?, lookup(b)?) {
                Some(c) => {
                    sum += c;
                    count += 1;
                }
                None => excluded += 1,
            }
        }
        Ok((if count > 0 { sum / count as f64 } else { 0.0 }, count))
    };
    let (pmean, positive_count) = mean(positive)?;
    let (nmean, negative_count) = mean(negative)?;
    Ok(SimilarityReport {
        pmean,
        nmean,
        diff: pmean - nmean,
        positive_count,
        negative_count,
        excluded,
    })
}

/// Indices of `docs` ordered by descending cosine to `query`, ties by
/// ascending id. Zero vectors score 0.
fn rank_by_cosine(query: &[f64], docs: &[Embedding]) -> Vec<(usize, f64)> {
    let mut scored: Vec<(usize, f64)> = docs
        .iter()
        .enumerate()
        .map(|(i, d)| (i, cosine(query, &d.vector).unwrap_or(0.0)))
        .collect();
    scored.sort_by(|a, b| {
        b.1.partial_cmp(&a.1)
            .unwrap_or(Ordering::Equal)
            .then_with(|| docs[a.0].source_id.cmp(&docs[b.0].source_id))
    });
    scored
}

/// Exact top-k documents by cosine similarity.
pub fn retrieve_topk(query: &[f64], documents: &[Embedding], k: usize) -> Result<Vec<(String, f64)>, AnalyticsError> {
    if k > documents.len() {
        return Err(bad(format!("k = {k} exceeds {} documents", documents.len())));
    }
    check_dims(query.len(), documents.iter().map(|d| d.vector.as_slice()))?;
    Ok(rank_by_cosine(query, documents)
        .into_iter()
        .take(k)
        .map(|(i, s)| (documents[i].source_id.clone(), s))
        .collect())
}

/// Rank references for every query; relevant references share the query's
/// template id.
pub fn log_search(
    queries: &[Embedding],
    query_templates: &[String],
    references: &[Embedding],
    reference_templates: &[String],
    k: usize,
) -> Result<Vec<RankedResult>, AnalyticsError> {
    if queries.len() != query_templates.len() || references.len() != reference_templates.len() {
        return Err(AnalyticsError::LengthMismatch("template ids must align with embeddings".into()));
    }
    if k > references.len() {
        return Err(bad(format!("k = {k} exceeds {} references", references.len())));
    }
    let dim = queries.first().map_or(0, |q| q.vector.len());
    check_dims(dim, queries.iter().chain(references).map(|e| e.vector.as_slice()))?;
    let mut by_template: HashMap<&str, BTreeSet<String>> = HashMap::new();
    for (r, t) in references.iter().zip(reference_templates) {
        by_template.entry(t.as_str()).or_default().insert(r.source_id.clone());
    }
    Ok(queries
        .par_iter()
        .zip(query_templates)
        .map(|(q, t)| RankedResult {
            query_id: q.source_id.clone(),
            ranked_doc_ids: rank_by_cosine(&q.vector, references)
                .into_iter()
                .take(k)
                .map(|(i, _)| references[i].source_id.clone())
                .collect(),
            relevant_doc_ids: by_template.get(t.as_str()).cloned().unwrap_or_default(),
        })
        .collect())
}

/// Greedy Max-Min selection of `n` ids. The first pick is closest to the
/// centroid; each later pick maximizes its distance to the nearest
/// selected point. Ties go to the smaller id.
pub fn subsample_maxmin(embeddings: &[Embedding], n: usize) -> Result<Vec<String>, AnalyticsError> {
    if n == 0 || n > embeddings.len() {
        return Err(bad(format!("n = {n} must be in 1..={}", embeddings.len())));
    }
    let dim = embeddings[0].vector.len();
    check_dims(dim, embeddings.iter().map(|e| e.vector.as_slice()))?;
    let mut centroid = vec![0.0; dim];
    for e in embeddings {
        for (c, x) in centroid.iter_mut().zip(&e.vector) {
            *c += x;
        }
    }
    for c in &mut centroid {
        *c /= embeddings.len() as f64;
    }
    let pick = |score: &dyn Fn(usize) -> f64, taken: &[bool], maximize: bool| -> usize {
        let mut best: Option<(usize, f64)> = None;
        for i in 0..embeddings.len() {
            if taken[i] {
                continue;
            }
            let s = score(i);
            let better = match best {
                None => true,
                Some((j, b)) => {
                    let strictly = if maximize { s > b } else { s < b };
                    strictly || (s == b && embeddings[i].source_id < embeddings[j].source_id)
                }
            };
            if better {
                best = Some((i, s));
            }
        }
        best.expect("an unselected point remains").0
    };
    let mut taken = vec![false; embeddings.len()];
    let first = pick(&|i| euclidean(&embeddings[i].vector, &centroid), &taken, false);
    taken[first] = true;
    let mut selected = vec![first];
    let mut min_dist: Vec<f64> = embeddings.iter().map(|e| euclidean(&e.vector, &embeddings[first].vector)).collect();
    while selected.len() < n {
        let next = pick(&|i| min_dist[i], &taken, true);
        taken[next] = true;
        selected.push(next);
        for (i, e) in embeddings.iter().enumerate() {
            min_dist[i] = min_dist[i].min(euclidean(&e.vector, &embeddings[next].vector));
        }
    }
    Ok(selected.into_iter().map(|i| embeddings[i].source_id.clone()).collect())
}

/// Character-level edit distance.
pub fn levenshtein(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, ca) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, cb) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(ca != cb);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubsampleScore {
    pub entity_count: usize,
    pub levenshtein_total: usize,
}

/// Distinct (column, value) entities plus summed pairwise edit distance of
/// the raw lines. Unstructured logs contribute whitespace tokens under a
/// single unnamed column.
pub fn subsample_score(selected: &[LogRecord]) -> SubsampleScore {
    let mut entities: BTreeSet<(&str, &str)> = BTreeSet::new();
    for log in selected {
        match &log.fields {
            Some(fields) => entities.extend(fields.iter().map(|(k, v)| (k.as_str(), v.as_str()))),
            None => entities.extend(log.raw.split_whitespace().map(|t| ("", t))),
        }
    }
    let levenshtein_total = (0..selected.len())
        .into_par_iter()
        .map(|i| {
            (i + 1..selected.len())
                .map(|j| levenshtein(&selected[i].raw, &selected[j].raw))
                .sum::<usize>()
        })
        .sum();
    SubsampleScore {
        entity_count: entities.len(),
        levenshtein_total,
    }
}

const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;

/// Average path length of an unsuccessful binary-search-tree lookup among
/// `n` points.
pub fn average_path_length(n: usize) -> f64 {
    match n {
        0 | 1 => 0.0,
        2 => 1.0,
        _ => {
            let n = n as f64;
            2.0 * ((n - 1.0).ln() + EULER_GAMMA) - 2.0 * (n - 1.0) / n
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ITreeNode {
    Split {
        feature: usize,
        value: f64,
        left: usize,
        right: usize,
    },
    Leaf {
        size: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IsolationTree {
    pub nodes: Vec<ITreeNode>,
}

impl IsolationTree {
    fn build(rows: &[&[f64]], depth_limit: usize, rng: &mut seed::Rng) -> Self {
        let mut tree = Self { nodes: Vec::new() };
        tree.grow(rows.to_vec(), 0, depth_limit, rng);
        tree
    }

    fn grow(&mut self, rows: Vec<&[f64]>, depth: usize, limit: usize, rng: &mut seed::Rng) -> usize {
        let id = self.nodes.len();
        self.nodes.push(ITreeNode::Leaf { size: rows.len() });
        if rows.len() <= 1 || depth >= limit {
            return id;
        }
        let dim = rows[0].len();
        let ranges: Vec<(usize, f64, f64)> = (0..dim)
            .filter_map(|f| {
                let lo = rows.iter().map(|r| r[f]).fold(f64::INFINITY, f64::min);
                let hi = rows.iter().map(|r| r[f]).fold(f64::NEG_INFINITY, f64::max);
                (hi > lo).then_some((f, lo, hi))
            })
            .collect();
        if ranges.is_empty() {
            return id;
        }
        let (feature, lo, hi) = ranges[rng.random_range(0..ranges.len())];
        let value = rng.random_range(lo..hi);
        let (l, r): (Vec<&[f64]>, Vec<&[f64]>) = rows.into_iter().partition(|row| row[feature] < value);
        let left = self.grow(l, depth + 1, limit, rng);
        let right = self.grow(r, depth + 1, limit, rng);
        self.nodes[id] = ITreeNode::Split {
            feature,
            value,
            left,
            right,
        };
        id
    }

    /// Edges to the leaf plus the expected remaining depth of its points.
    pub fn path_length(&self, x: &[f64]) -> f64 {
        let mut node = 0;
        let mut depth = 0.0;
        loop {
            match self.nodes[node] {
                ITreeNode::Split {
                    feature,
                    value,
                    left,
                    right,
                } => {
                    node = if x[feature] < value { left } else { right };
                    depth += 1.0;
                }
                ITreeNode::Leaf { size } => return depth + average_path_length(size),
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[ITreeNode], i: usize) -> usize {
            match nodes[i] {
                ITreeNode::Split { left, right, .. } => 1 + walk(nodes, left).max(walk(nodes, right)),
                ITreeNode::Leaf { .. } => 0,
            }
        }
        walk(&self.nodes, 0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IsolationForestModel {
    pub trees: Vec<IsolationTree>,
    pub subsample_size: usize,
    pub num_trees: usize,
    pub seed: u64,
    pub dim: usize,
}

/// Fit `num_trees` isolation trees on subsamples of `subsample_size` rows.
pub fn iforest_fit(
    features: &[Vec<f64>],
    num_trees: usize,
    subsample_size: usize,
    seed_value: u64,
) -> Result<IsolationForestModel, AnalyticsError> {
    if features.len() < 2 {
        return Err(AnalyticsError::TooFewRows(features.len()));
    }
    if num_trees == 0 {
        return Err(bad("num_trees must be positive"));
    }
    if subsample_size < 2 || subsample_size > features.len() {
        return Err(bad(format!("subsample_size must be in 2..={}", features.len())));
    }
    let dim = features[0].len();
    check_dims(dim, features.iter().map(Vec::as_slice))?;
    if features.iter().all(|r| r == &features[0]) {
        log::warn!("all feature rows are identical; every score will be equal");
    }
    let limit = (subsample_size as f64).log2().ceil() as usize;
    let stream = seed::derive(seed_value, "iforest");
    let trees = (0..num_trees)
        .into_par_iter()
        .map(|t| {
            let mut rng = seed::rng(seed::derive_index(stream, t as u64));
            let rows: Vec<&[f64]> = index::sample(&mut rng, features.len(), subsample_size)
                .into_iter()
                .map(|i| features[i].as_slice())
                .collect();
            IsolationTree::build(&rows, limit, &mut rng)
        })
        .collect();
    Ok(IsolationForestModel {
        trees,
        subsample_size,
        num_trees,
        seed: seed_value,
        dim,
    })
}

/// Anomaly scores `2^(-E[h(x)] / c(psi))`; higher is more anomalous.
pub fn iforest_score(model: &IsolationForestModel, features: &[Vec<f64>]) -> Result<Vec<f64>, AnalyticsError> {
    check_dims(model.dim, features.iter().map(Vec::as_slice))?;
    let c = average_path_length(model.subsample_size);
    Ok(features
        .par_iter()
        .map(|x| {
            let mean = model.trees.iter().map(|t| t.path_length(x)).sum::<f64>() / model.trees.len() as f64;
            2f64.powf(-mean / c)
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum PatternMode {
    #[default]
    Embedding,
    Hybrid,
}

impl std::str::FromStr for PatternMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "embedding" => Ok(Self::Embedding),
            "hybrid" => Ok(Self::Hybrid),
            _ => Err(format!("unknown mode {s:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PatternConfig {
    pub mode: PatternMode,
    pub top_k: usize,
    pub num_trees: usize,
    /// Capped at the number of rows.
    pub subsample_size: usize,
    pub seed: u64,
    /// Columns label-encoded in hybrid mode.
    pub structured_columns: Vec<String>,
}

impl Default for PatternConfig {
    fn default() -> Self {
        Self {
            mode: PatternMode::Embedding,
            top_k: 5,
            num_trees: 100,
            subsample_size: 256,
            seed: 0,
            structured_columns: Vec::new(),
        }
    }
}

/// Per-column dictionary codes in first-seen order, scaled to [0, 1].
pub fn label_codes(logs: &[LogRecord], columns: &[String]) -> Vec<Vec<f64>> {
    let mut rows = vec![Vec::with_capacity(columns.len()); logs.len()];
    for column in columns {
        let mut codes: HashMap<&str, usize> = HashMap::new();
        let raw: Vec<usize> = logs
            .iter()
            .map(|log| {
                let value = log
                    .fields
                    .as_ref()
                    .and_then(|f| f.get(column))
                    .map_or("", String::as_str);
                let next = codes.len();
                *codes.entry(value).or_insert(next)
            })
            .collect();
        let scale = codes.len().saturating_sub(1).max(1) as f64;
        for (row, code) in rows.iter_mut().zip(raw) {
            row.push(code as f64 / scale);
        }
    }
    rows
}

/// The non-structured columns rendered like a structured record's raw text,
/// or None when every column is structured.
pub fn unstructured_text(log: &LogRecord, structured_columns: &[String]) -> Option<String> {
    let fields = log.fields.as_ref()?;
    let rest: BTreeMap<String, String> = fields
        .iter()
        .filter(|(k, _)| !structured_columns.contains(k))
        .map(|(k, v)| (k.clone(), v.clone()))
        .collect();
    (!rest.is_empty()).then(|| crate::corpus::canonical_fields(&rest))
}

/// Hybrid feature rows: label codes, then the unstructured embedding when
/// one is given.
pub fn hybrid_features(
    logs: &[LogRecord],
    structured_columns: &[String],
    unstructured: Option<&[Vec<f64>]>,
) -> Result<Vec<Vec<f64>>, AnalyticsError> {
    if structured_columns.is_empty() {
        return Err(bad("hybrid mode needs structured columns"));
    }
    let mut rows = label_codes(logs, structured_columns);
    match unstructured {
        Some(emb) => {
            if emb.len() != logs.len() {
                return Err(AnalyticsError::LengthMismatch("one unstructured embedding per log".into()));
            }
            for (row, e) in rows.iter_mut().zip(emb) {
                row.extend_from_slice(e);
            }
        }
        None => log::warn!("no unstructured columns; using label codes only"),
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatternReport {
    pub flagged: Vec<String>,
    pub scores: Vec<f64>,
    /// Flagged ids labeled anomalous, divided by `top_k`.
    pub accuracy_at_k: Option<f64>,
}

/// Score rows with an isolation forest and flag the `top_k` highest.
pub fn pattern_detect(
    ids: &[String],
    features: &[Vec<f64>],
    labels: Option<&[bool]>,
    config: &PatternConfig,
) -> Result<PatternReport, AnalyticsError> {
    if ids.len() != features.len() || labels.is_some_and(|l| l.len() != ids.len()) {
        return Err(AnalyticsError::LengthMismatch("ids, features and labels must align".into()));
    }
    if config.top_k == 0 || config.top_k > ids.len() {
        return Err(bad(format!("top_k must be in 1..={}", ids.len())));
    }
    let psi = config.subsample_size.min(features.len());
    let model = iforest_fit(features, config.num_trees, psi, config.seed)?;
    let scores = iforest_score(&model, features)?;
    let mut order: Vec<usize> = (0..ids.len()).collect();
    order.sort_by(|&a, &b| {
        scores[b]
            .partial_cmp(&scores[a])
            .unwrap_or(Ordering::Equal)
            .then_with(|| ids[a].cmp(&ids[b]))
    });
    order.truncate(config.top_k);
    let accuracy_at_k = labels.map(|l| order.iter().filter(|&&i| l[i]).count() as f64 / config.top_k as f64);
    Ok(PatternReport {
        flagged: order.iter().map(|&i| ids[i].clone()).collect(),
        scores,
        accuracy_at_k,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum IncidentLabel {
    #[serde(rename = "TP")]
    Tp,
    #[serde(rename = "FP")]
    Fp,
    #[serde(rename = "BP")]
    Bp,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IncidentRecord {
    pub id: String,
    pub text: String,
    #[serde(default)]
    pub label: Option<IncidentLabel>,
    #[serde(default)]
    pub timestamp: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TriageConfig {
    pub k: usize,
    pub tp_threshold: f64,
    pub bpfp_threshold: f64,
}

impl Default for TriageConfig {
    fn default() -> Self {
        Self {
            k: 15,
            tp_threshold: 1.0,
            bpfp_threshold: 1.0,
        }
    }
}

impl TriageConfig {
    pub fn validate(&self) -> Result<(), AnalyticsError> {
        for t in [self.tp_threshold, self.bpfp_threshold] {
            if !(0.5..=1.0).contains(&t) {
                return Err(bad("vote thresholds must be in [0.5, 1]"));
            }
        }
        if self.k == 0 {
            return Err(bad("k must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TriageModel {
    pub config: TriageConfig,
    pub embeddings: Vec<Vec<f64>>,
    pub labels: Vec<IncidentLabel>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TriageDecision {
    AutoTp,
    AutoBpfp,
    Escalate,
}

pub fn triage_fit(
    train: &[IncidentRecord],
    embeddings: &[Vec<f64>],
    config: &TriageConfig,
) -> Result<TriageModel, AnalyticsError> {
    config.validate()?;
    if train.is_empty() {
        return Err(AnalyticsError::EmptyTrain);
    }
    if train.len() != embeddings.len() {
        return Err(AnalyticsError::LengthMismatch("one embedding per incident".into()));
    }
    if config.k > train.len() {
        return Err(bad(format!("k = {} exceeds {} training incidents", config.k, train.len())));
    }
    check_dims(embeddings[0].len(), embeddings.iter().map(Vec::as_slice))?;
    let labels = train
        .iter()
        .map(|r| r.label.ok_or_else(|| bad(format!("incident {} has no label", r.id))))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(TriageModel {
        config: config.clone(),
        embeddings: embeddings.to_vec(),
        labels,
    })
}

impl TriageModel {
    /// Fraction of the k nearest neighbors (cosine distance, ties by
    /// training order) labeled TP.
    pub fn tp_vote(&self, query: &[f64]) -> f64 {
        let mut dist: Vec<(usize, f64)> = self
            .embeddings
            .iter()
            .enumerate()
            .map(|(i, e)| (i, 1.0 - cosine(query, e).unwrap_or(0.0)))
            .collect();
        dist.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap_or(Ordering::Equal).then(a.0.cmp(&b.0)));
        let k = self.config.k;
        dist[..k].iter().filter(|(i, _)| self.labels[*i] == IncidentLabel::Tp).count() as f64 / k as f64
    }

    pub fn decide(&self, tp_vote: f64) -> TriageDecision {
        if tp_vote >= self.config.tp_threshold {
            TriageDecision::AutoTp
        } else if 1.0 - tp_vote >= self.config.bpfp_threshold {
            TriageDecision::AutoBpfp
        } else {
            TriageDecision::Escalate
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TriageReport {
    pub decisions: Vec<TriageDecision>,
    pub tp_votes: Vec<f64>,
    /// Fraction of incidents not escalated.
    pub volume_reduction: f64,
    /// Auto-BP/FP decisions on true TPs.
    pub mis_suppression: usize,
    /// Auto-TP decisions on true BP/FP.
    pub mis_elevation: usize,
}

pub fn triage_apply(
    model: &TriageModel,
    test: &[IncidentRecord],
    embeddings: &[Vec<f64>],
) -> Result<TriageReport, AnalyticsError> {
    if test.len() != embeddings.len() {
        return Err(AnalyticsError::LengthMismatch("one embedding per incident".into()));
    }
    check_dims(model.embeddings[0].len(), embeddings.iter().map(Vec::as_slice))?;
    let tp_votes: Vec<f64> = embeddings.par_iter().map(|e| model.tp_vote(e)).collect();
    let decisions: Vec<TriageDecision> = tp_votes.iter().map(|&v| model.decide(v)).collect();
    let mut mis_suppression = 0;
    let mut mis_elevation = 0;
    for (d, r) in decisions.iter().zip(test) {
        match (d, r.label) {
            (TriageDecision::AutoBpfp, Some(IncidentLabel::Tp)) => mis_suppression += 1,
            (TriageDecision::AutoTp, Some(IncidentLabel::Bp | IncidentLabel::Fp)) => mis_elevation += 1,
            _ => {}
        }
    }
    let kept = decisions.iter().filter(|d| **d != TriageDecision::Escalate).count();
    Ok(TriageReport {
        volume_reduction: if test.is_empty() { 0.0 } else { kept as f64 / test.len() as f64 },
        decisions,
        tp_votes,
        mis_suppression,
        mis_elevation,
    })
}

/// Label counts per decision, for reports.
pub fn decision_table(decisions: &[TriageDecision], test: &[IncidentRecord]) -> BTreeMap<String, usize> {
    let mut table = BTreeMap::new();
    for (d, r) in decisions.iter().zip(test) {
        let label = r.label.map_or("unlabeled".to_string(), |l| format!("{l:?}").to_uppercase());
        *table.entry(format!("{d:?}/{label}")).or_insert(0) += 1;
    }
    table
}
