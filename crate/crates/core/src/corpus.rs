//! Log corpora: normalization, exact and MinHash/LSH deduplication, and
//! train / in-distribution / out-of-distribution splitting.

use std::collections::{BTreeMap, HashMap, HashSet};

use rand::seq::SliceRandom;
use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::seed;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum CorpusError {
    #[error("record {0:?} is empty after normalization")]
    EmptyRecord(String),
    #[error("record of {len} bytes is shorter than the shingle width {width}")]
    RecordTooShort { len: usize, width: usize },
    #[error("bands ({bands}) x rows per band ({rows}) must equal the permutation count ({perms})")]
    BadBanding { bands: usize, rows: usize, perms: usize },
    #[error("out-of-distribution source {0:?} also appears in the main corpus")]
    SourceOverlap(String),
    #[error("split fractions ({0}, {1}) must be non-negative and sum to at most 1")]
    BadFractions(f64, f64),
    #[error("invalid parameter: {0}")]
    BadParameter(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    IdTest,
    OodTest,
    #[default]
    Unlabeled,
}

impl Split {
    fn is_unlabeled(&self) -> bool {
        *self == Split::Unlabeled
    }
}

/// One log line or one serialized structured event.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub id: String,
    pub raw: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fields: Option<BTreeMap<String, String>>,
    #[serde(default)]
    pub source: String,
    #[serde(default, skip_serializing_if = "Split::is_unlabeled")]
    pub split: Split,
    /// Ground-truth template id, when the record came from a generator.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub template: Option<String>,
    /// Ground-truth anomaly label, when known.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub anomaly: Option<bool>,
}

impl LogRecord {
    pub fn new(id: impl Into<String>, raw: impl Into<String>, source: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            raw: raw.into(),
            fields: None,
            source: source.into(),
            split: Split::Unlabeled,
            template: None,
            anomaly: None,
        }
    }

    pub fn structured(
        id: impl Into<String>,
        fields: BTreeMap<String, String>,
        source: impl Into<String>,
    ) -> Self {
        let raw = canonical_fields(&fields);
        Self {
            fields: Some(fields),
            ..Self::new(id, raw, source)
        }
    }
}

/// JSON object with keys in ascending order, written `{"k": "v", ...}` so
/// every key and value is its own whitespace-separated chunk.
pub fn canonical_fields(fields: &BTreeMap<String, String>) -> String {
    let quote = |s: &str| serde_json::to_string(s).expect("strings serialize");
    let body: Vec<String> = fields.iter().map(|(k, v)| format!("{}: {}", quote(k), quote(v))).collect();
    format!("{{{}}}", body.join(", "))
}

/// Strip one trailing line terminator and re-serialize structured fields
/// in canonical key order.
pub fn normalize(mut record: LogRecord) -> Result<LogRecord, CorpusError> {
    if let Some(fields) = &record.fields {
        record.raw = canonical_fields(fields);
    } else {
        if record.raw.ends_with('\n') {
            record.raw.pop();
            if record.raw.ends_with('\r') {
                record.raw.pop();
            }
        }
    }
    if record.raw.is_empty() {
        return Err(CorpusError::EmptyRecord(record.id));
    }
    Ok(record)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DedupReport {
    pub input_count: usize,
    pub exact_removed: usize,
    pub approx_removed: usize,
    pub output_count: usize,
    /// Each group lists the kept id first, followed by the ids it absorbed.
    pub duplicate_groups: Vec<Vec<String>>,
}

impl DedupReport {
    pub fn is_consistent(&self) -> bool {
        self.input_count == self.output_count + self.exact_removed + self.approx_removed
    }

    /// Fold a later stage's report into this one.
    pub fn chain(mut self, next: DedupReport) -> DedupReport {
        self.exact_removed += next.exact_removed;
        self.approx_removed += next.approx_removed;
        self.output_count = next.output_count;
        self.duplicate_groups.extend(next.duplicate_groups);
        self
    }
}

/// Keep the first occurrence of every distinct raw string.
pub fn dedup_exact(records: Vec<LogRecord>) -> (Vec<LogRecord>, DedupReport) {
    let input_count = records.len();
    let mut first: HashMap<String, usize> = HashMap::new();
    let mut groups: Vec<Vec<String>> = Vec::new();
    let mut group_of: HashMap<usize, usize> = HashMap::new();
    let mut kept = Vec::with_capacity(records.len());
    for record in records {
        match first.get(&record.raw) {
            Some(&keeper) => {
                let g = *group_of.entry(keeper).or_insert_with(|| {
                    groups.push(vec![kept_id(&kept, keeper)]);
                    groups.len() - 1
                });
                groups[g].push(record.id);
            }
            None => {
                first.insert(record.raw.clone(), kept.len());
                kept.push(record);
            }
        }
    }
    let report = DedupReport {
        input_count,
        exact_removed: input_count - kept.len(),
        approx_removed: 0,
        output_count: kept.len(),
        duplicate_groups: groups,
    };
    (kept, report)
}

fn kept_id(kept: &[LogRecord], idx: usize) -> String {
    kept[idx].id.clone()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MinHashSignature {
    pub values: Vec<u64>,
    pub num_permutations: usize,
    pub shingle_width: usize,
}

impl MinHashSignature {
    /// Fraction of positions where the two signatures agree.
    pub fn estimate_jaccard(&self, other: &MinHashSignature) -> f64 {
        assert_eq!(self.values.len(), other.values.len(), "signature lengths differ");
        let equal = self
            .values
            .iter()
            .zip(&other.values)
            .filter(|(a, b)| a == b)
            .count();
        equal as f64 / self.values.len() as f64
    }
}

const MERSENNE_61: u64 = (1 << 61) - 1;

/// The family of universal hashes `(a*x + b) mod (2^61 - 1)` for one seed.
#[derive(Debug, Clone)]
pub struct MinHasher {
    coeffs: Vec<(u64, u64)>,
    shingle_width: usize,
}

impl MinHasher {
    pub fn new(num_permutations: usize, shingle_width: usize, seed: u64) -> Self {
        let mut rng = seed::named_rng(seed, "minhash");
        let coeffs = (0..num_permutations)
            .map(|_| {
                (
                    rng.random_range(1..MERSENNE_61),
                    rng.random_range(0..MERSENNE_61),
                )
            })
            .collect();
        Self {
            coeffs,
            shingle_width,
        }
    }

    pub fn num_permutations(&self) -> usize {
        self.coeffs.len()
    }

    /// Signature of a record. Inputs shorter than the shingle width are
    /// treated as a single shingle.
    pub fn sign(&self, raw: &[u8]) -> MinHashSignature {
        let hashes: Vec<u64> = shingle_set(raw, self.shingle_width)
            .into_iter()
            .map(shingle_hash)
            .collect();
        let values = self
            .coeffs
            .iter()
            .map(|&(a, b)| {
                hashes
                    .iter()
                    .map(|&h| mod_mersenne(u128::from(a) * u128::from(h) + u128::from(b)))
                    .min()
                    .unwrap_or(u64::MAX)
            })
            .collect();
        MinHashSignature {
            values,
            num_permutations: self.coeffs.len(),
            shingle_width: self.shingle_width,
        }
    }
}

fn mod_mersenne(x: u128) -> u64 {
    let p = u128::from(MERSENNE_61);
    let folded = (x & p) + (x >> 61);
    let folded = (folded & p) + (folded >> 61);
    (folded % p) as u64
}

/// Distinct byte windows of the given width.
pub fn shingle_set(raw: &[u8], width: usize) -> HashSet<&[u8]> {
    if raw.len() <= width {
        return std::iter::once(raw).collect();
    }
    raw.windows(width).collect()
}

fn shingle_hash(shingle: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in shingle {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    // Reduce into the field so the affine map stays a permutation.
    h % MERSENNE_61
}

pub fn minhash_signature(
    raw: &[u8],
    num_permutations: usize,
    shingle_width: usize,
    seed: u64,
) -> Result<MinHashSignature, CorpusError> {
    if num_permutations == 0 {
        return Err(CorpusError::BadParameter("num_permutations must be at least 1"));
    }
    if shingle_width == 0 {
        return Err(CorpusError::BadParameter("shingle_width must be at least 1"));
    }
    if raw.len() < shingle_width {
        return Err(CorpusError::RecordTooShort {
            len: raw.len(),
            width: shingle_width,
        });
    }
    Ok(MinHasher::new(num_permutations, shingle_width, seed).sign(raw))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ApproxDedupConfig {
    pub jaccard_threshold: f64,
    pub num_permutations: usize,
    pub bands: usize,
    pub rows_per_band: usize,
    pub shingle_width: usize,
    pub seed: u64,
}

impl Default for ApproxDedupConfig {
    fn default() -> Self {
        Self {
            jaccard_threshold: 0.9,
            num_permutations: 256,
            bands: 32,
            rows_per_band: 8,
            shingle_width: 8,
            seed: 0,
        }
    }
}

impl ApproxDedupConfig {
    pub fn validate(&self) -> Result<(), CorpusError> {
        if !(self.jaccard_threshold > 0.0 && self.jaccard_threshold <= 1.0) {
            return Err(CorpusError::BadParameter("jaccard_threshold must lie in (0, 1]"));
        }
        if self.shingle_width == 0 {
            return Err(CorpusError::BadParameter("shingle_width must be at least 1"));
        }
        if self.num_permutations == 0 || self.bands * self.rows_per_band != self.num_permutations
        {
            return Err(CorpusError::BadBanding {
                bands: self.bands,
                rows: self.rows_per_band,
                perms: self.num_permutations,
            });
        }
        Ok(())
    }
}

/// Remove near duplicates found through LSH banding.
///
/// A candidate pair is resolved when its signature-estimated Jaccard reaches
/// the threshold; the earlier surviving record absorbs the later one.
pub fn dedup_approx(
    records: Vec<LogRecord>,
    config: &ApproxDedupConfig,
) -> Result<(Vec<LogRecord>, DedupReport), CorpusError> {
    config.validate()?;
    let input_count = records.len();
    let hasher = MinHasher::new(config.num_permutations, config.shingle_width, config.seed);
    let signatures: Vec<MinHashSignature> = records
        .par_iter()
        .map(|r| hasher.sign(r.raw.as_bytes()))
        .collect();

    let mut buckets: HashMap<(usize, &[u64]), Vec<usize>> = HashMap::new();
    let mut candidates: Vec<Vec<usize>> = vec![Vec::new(); records.len()];
    for (i, sig) in signatures.iter().enumerate() {
        for (band, rows) in sig.values.chunks(config.rows_per_band).enumerate() {
            let bucket = buckets.entry((band, rows)).or_default();
            for &earlier in bucket.iter() {
                candidates[earlier].push(i);
            }
            bucket.push(i);
        }
    }

    let mut removed = vec![false; records.len()];
    let mut groups = Vec::new();
    for i in 0..records.len() {
        if removed[i] {
            continue;
        }
        let mut later = std::mem::take(&mut candidates[i]);
        later.sort_unstable();
        later.dedup();
        let mut group = Vec::new();
        for j in later {
            if removed[j] {
                continue;
            }
            if signatures[i].estimate_jaccard(&signatures[j]) >= config.jaccard_threshold {
                removed[j] = true;
                group.push(j);
            }
        }
        if !group.is_empty() {
            let mut ids = vec![records[i].id.clone()];
            ids.extend(group.iter().map(|&j| records[j].id.clone()));
            groups.push(ids);
        }
    }

    let kept: Vec<LogRecord> = records
        .into_iter()
        .zip(&removed)
        .filter(|(_, &r)| !r)
        .map(|(rec, _)| rec)
        .collect();
    let report = DedupReport {
        input_count,
        exact_removed: 0,
        approx_removed: input_count - kept.len(),
        output_count: kept.len(),
        duplicate_groups: groups,
    };
    Ok((kept, report))
}

/// Normalize, exact-dedup, then approximate-dedup.
pub fn dedup_pipeline(
    records: Vec<LogRecord>,
    config: &ApproxDedupConfig,
) -> Result<(Vec<LogRecord>, DedupReport), CorpusError> {
    let records = records
        .into_iter()
        .map(normalize)
        .collect::<Result<Vec<_>, _>>()?;
    let (records, exact) = dedup_exact(records);
    let (records, approx) = dedup_approx(records, config)?;
    Ok((records, exact.chain(approx)))
}

/// Assign `train`/`id_test` by a seeded shuffle and mark every
/// out-of-distribution record `ood_test`. Records left over are unlabeled.
pub fn split_corpus(
    mut records: Vec<LogRecord>,
    fractions: (f64, f64),
    mut ood_records: Vec<LogRecord>,
    seed: u64,
) -> Result<Vec<LogRecord>, CorpusError> {
    let (train, id_test) = fractions;
    if train < 0.0 || id_test < 0.0 || train + id_test > 1.0 + 1e-12 {
        return Err(CorpusError::BadFractions(train, id_test));
    }
    let sources: HashSet<&str> = records.iter().map(|r| r.source.as_str()).collect();
    if let Some(r) = ood_records.iter().find(|r| sources.contains(r.source.as_str())) {
        return Err(CorpusError::SourceOverlap(r.source.clone()));
    }
    let n = records.len();
    let n_train = ((train * n as f64).round() as usize).min(n);
    let n_id = ((id_test * n as f64).round() as usize).min(n - n_train);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut seed::named_rng(seed, "split"));
    for (rank, &idx) in order.iter().enumerate() {
        records[idx].split = if rank < n_train {
            Split::Train
        } else if rank < n_train + n_id {
            Split::IdTest
        } else {
            Split::Unlabeled
        };
    }
    for r in &mut ood_records {
        r.split = Split::OodTest;
    }
    records.extend(ood_records);
    Ok(records)
}
