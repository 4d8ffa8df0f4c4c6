//! Byte-level BPE tokenizer.
//!
//! Ids `0..256` are the raw bytes, the next five ids are the special tokens,
//! and learned merges follow. Pre-tokenization only separates whitespace
//! runs from non-whitespace runs, so merges never cross that boundary.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::path::Path;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::corpus::LogRecord;
use crate::io::{self, IoError};
use crate::seed;

pub type TokenId = u32;

pub const NUM_BYTES: usize = 256;
pub const PAD: TokenId = 256;
pub const MASK: TokenId = 257;
pub const UNK: TokenId = 258;
pub const BOS: TokenId = 259;
pub const EOS: TokenId = 260;
pub const NUM_SPECIAL: usize = 5;
/// First id available to learned merges.
pub const FIRST_LEARNED: TokenId = (NUM_BYTES + NUM_SPECIAL) as TokenId;

pub const DEFAULT_DELIMITERS: &str = "\"'{}[]():;,=/\\|<>";

#[derive(Debug, thiserror::Error)]
pub enum TokenizerError {
    #[error("target vocabulary {0} must exceed the {FIRST_LEARNED} base and special tokens")]
    VocabTooSmall(usize),
    #[error("corpus is empty")]
    EmptyCorpus,
    #[error("corpus too small: no byte pair occurs at least twice")]
    CorpusTooSmall,
    #[error("unknown token id {0}")]
    UnknownTokenId(TokenId),
    #[error("unsupported tokenizer file version {0}")]
    BadVersion(u32),
    #[error("corrupt tokenizer file: {0}")]
    Corrupt(String),
    #[error(transparent)]
    Io(#[from] IoError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpecialTokens {
    pub pad: TokenId,
    pub mask: TokenId,
    pub unk: TokenId,
    pub bos: TokenId,
    pub eos: TokenId,
}

impl Default for SpecialTokens {
    fn default() -> Self {
        Self {
            pad: PAD,
            mask: MASK,
            unk: UNK,
            bos: BOS,
            eos: EOS,
        }
    }
}

pub fn is_special(id: TokenId) -> bool {
    (PAD..FIRST_LEARNED).contains(&id)
}

/// Token ids with the byte span each one covers in the source.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TokenSequence {
    pub ids: Vec<TokenId>,
    pub offsets: Vec<(usize, usize)>,
}

impl TokenSequence {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TokenizerModel {
    vocab: Vec<Vec<u8>>,
    merges: Vec<(TokenId, TokenId)>,
    ranks: HashMap<(TokenId, TokenId), usize>,
    pub special_tokens: SpecialTokens,
    pub delimiter_ids: BTreeSet<TokenId>,
}

#[derive(Serialize, Deserialize)]
struct TokenizerFile {
    vocab: Vec<Vec<u8>>,
    merges: Vec<(TokenId, TokenId)>,
    special_tokens: SpecialTokens,
    delimiter_ids: Vec<TokenId>,
    version: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BpeTrainConfig {
    pub vocab_size: usize,
    /// Per-source inclusion probability; sources not listed are always kept.
    pub source_weights: BTreeMap<String, f64>,
    pub seed: u64,
}

impl Default for BpeTrainConfig {
    fn default() -> Self {
        Self {
            vocab_size: 4096,
            source_weights: BTreeMap::new(),
            seed: 0,
        }
    }
}

/// Split into maximal runs of whitespace and of non-whitespace bytes.
pub fn pretokenize(raw: &[u8]) -> Vec<(usize, usize)> {
    let mut spans = Vec::new();
    let mut start = 0;
    for i in 1..=raw.len() {
        if i == raw.len() || raw[i].is_ascii_whitespace() != raw[start].is_ascii_whitespace() {
            spans.push((start, i));
            start = i;
        }
    }
    spans
}

struct Word {
    symbols: Vec<TokenId>,
    count: u64,
}

fn word_pairs(symbols: &[TokenId]) -> impl Iterator<Item = (TokenId, TokenId)> + '_ {
    symbols.windows(2).map(|w| (w[0], w[1]))
}

fn merge_symbols(symbols: &[TokenId], pair: (TokenId, TokenId), new_id: TokenId) -> Vec<TokenId> {
    let mut out = Vec::with_capacity(symbols.len());
    let mut i = 0;
    while i < symbols.len() {
        if i + 1 < symbols.len() && symbols[i] == pair.0 && symbols[i + 1] == pair.1 {
            out.push(new_id);
            i += 2;
        } else {
            out.push(symbols[i]);
            i += 1;
        }
    }
    out
}

fn base_vocab() -> Vec<Vec<u8>> {
    let mut vocab: Vec<Vec<u8>> = (0..NUM_BYTES).map(|b| vec![b as u8]).collect();
    vocab.extend(std::iter::repeat_n(Vec::new(), NUM_SPECIAL));
    vocab
}

/// Greedy BPE: repeatedly merge the most frequent adjacent pair.
///
/// Ties go to the pair whose left token bytes sort first, then the right.
pub fn train_bpe(
    corpus: &[LogRecord],
    config: &BpeTrainConfig,
) -> Result<TokenizerModel, TokenizerError> {
    if config.vocab_size <= FIRST_LEARNED as usize {
        return Err(TokenizerError::VocabTooSmall(config.vocab_size));
    }
    if corpus.is_empty() {
        return Err(TokenizerError::EmptyCorpus);
    }
    let mut rng = seed::named_rng(config.seed, "bpe-sample");
    let mut chunk_counts: HashMap<&[u8], u64> = HashMap::new();
    for record in corpus {
        if let Some(&w) = config.source_weights.get(&record.source) {
            if rng.random::<f64>() >= w {
                continue;
            }
        }
        let raw = record.raw.as_bytes();
        for (s, e) in pretokenize(raw) {
            *chunk_counts.entry(&raw[s..e]).or_default() += 1;
        }
    }
    // Sorted so that training never depends on hash-map iteration order.
    let mut chunks: Vec<(&[u8], u64)> = chunk_counts.into_iter().collect();
    chunks.sort_unstable();
    let mut words: Vec<Word> = chunks
        .into_iter()
        .map(|(bytes, count)| Word {
            symbols: bytes.iter().map(|&b| TokenId::from(b)).collect(),
            count,
        })
        .collect();

    let mut pair_counts: HashMap<(TokenId, TokenId), u64> = HashMap::new();
    let mut where_found: HashMap<(TokenId, TokenId), HashSet<usize>> = HashMap::new();
    for (wi, word) in words.iter().enumerate() {
        for p in word_pairs(&word.symbols) {
            *pair_counts.entry(p).or_default() += word.count;
            where_found.entry(p).or_default().insert(wi);
        }
    }

    let mut vocab = base_vocab();
    let mut merges = Vec::new();
    while vocab.len() < config.vocab_size {
        let best = pair_counts
            .iter()
            .filter(|(_, &c)| c >= 2)
            .max_by(|(pa, ca), (pb, cb)| {
                ca.cmp(cb).then_with(|| {
                    // Reversed: the lexicographically smaller pair wins.
                    (&vocab[pb.0 as usize], &vocab[pb.1 as usize])
                        .cmp(&(&vocab[pa.0 as usize], &vocab[pa.1 as usize]))
                        .then_with(|| pb.cmp(pa))
                })
            })
            .map(|(&p, _)| p);
        let Some(pair) = best else { break };
        let new_id = vocab.len() as TokenId;
        let mut bytes = vocab[pair.0 as usize].clone();
        bytes.extend_from_slice(&vocab[pair.1 as usize]);
        vocab.push(bytes);
        merges.push(pair);

        let mut affected: Vec<usize> = where_found
            .remove(&pair)
            .unwrap_or_default()
            .into_iter()
            .collect();
        affected.sort_unstable();
        for wi in affected {
            let word = &mut words[wi];
            for p in word_pairs(&word.symbols) {
                if let Some(c) = pair_counts.get_mut(&p) {
                    *c -= word.count;
                    if *c == 0 {
                        pair_counts.remove(&p);
                    }
                }
            }
            word.symbols = merge_symbols(&word.symbols, pair, new_id);
            for p in word_pairs(&word.symbols) {
                *pair_counts.entry(p).or_default() += word.count;
                where_found.entry(p).or_default().insert(wi);
            }
        }
        pair_counts.remove(&pair);
    }
    if merges.is_empty() {
        return Err(TokenizerError::CorpusTooSmall);
    }
    log::debug!("trained BPE with {} merges", merges.len());
    Ok(TokenizerModel::from_parts(vocab, merges, BTreeSet::new()))
}

impl TokenizerModel {
    fn from_parts(
        vocab: Vec<Vec<u8>>,
        merges: Vec<(TokenId, TokenId)>,
        delimiter_ids: BTreeSet<TokenId>,
    ) -> Self {
        let ranks = merges.iter().enumerate().map(|(r, &p)| (p, r)).collect();
        Self {
            vocab,
            merges,
            ranks,
            special_tokens: SpecialTokens::default(),
            delimiter_ids,
        }
    }

    /// Rebuild the vocabulary by replaying merges over the byte alphabet.
    pub fn from_merges(merges: Vec<(TokenId, TokenId)>) -> Result<Self, TokenizerError> {
        let mut vocab = base_vocab();
        for &(l, r) in &merges {
            let (l, r) = (l as usize, r as usize);
            if l >= vocab.len() || r >= vocab.len() || is_special(l as TokenId) || is_special(r as TokenId) {
                return Err(TokenizerError::Corrupt(format!("merge ({l}, {r}) references an unknown token")));
            }
            let mut bytes = vocab[l].clone();
            bytes.extend_from_slice(&vocab[r]);
            vocab.push(bytes);
        }
        Ok(Self::from_parts(vocab, merges, BTreeSet::new()))
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab.len()
    }

    pub fn merges(&self) -> &[(TokenId, TokenId)] {
        &self.merges
    }

    pub fn token_bytes(&self, id: TokenId) -> Option<&[u8]> {
        self.vocab.get(id as usize).map(Vec::as_slice)
    }

    pub fn is_delimiter(&self, id: TokenId) -> bool {
        self.delimiter_ids.contains(&id)
    }

    /// Encode raw bytes; never emits special tokens.
    pub fn encode(&self, raw: &[u8]) -> TokenSequence {
        let mut seq = TokenSequence::default();
        for (start, end) in pretokenize(raw) {
            let mut symbols: Vec<TokenId> = raw[start..end].iter().map(|&b| TokenId::from(b)).collect();
            loop {
                let best = symbols
                    .windows(2)
                    .enumerate()
                    .filter_map(|(i, w)| self.ranks.get(&(w[0], w[1])).map(|&r| (r, i)))
                    .min();
                let Some((rank, _)) = best else { break };
                let pair = self.merges[rank];
                symbols = merge_symbols(&symbols, pair, FIRST_LEARNED + rank as TokenId);
            }
            let mut pos = start;
            for id in symbols {
                let len = self.vocab[id as usize].len();
                seq.ids.push(id);
                seq.offsets.push((pos, pos + len));
                pos += len;
            }
        }
        seq
    }

    /// Encode and wrap in BOS/EOS, truncating content to fit `max_len`.
    pub fn encode_for_model(&self, raw: &[u8], max_len: usize) -> TokenSequence {
        let inner = self.encode(raw);
        let keep = inner.len().min(max_len.saturating_sub(2));
        let mut seq = TokenSequence::default();
        let end = inner.offsets.get(keep.wrapping_sub(1)).map_or(0, |o| o.1);
        seq.ids.push(self.special_tokens.bos);
        seq.offsets.push((0, 0));
        seq.ids.extend_from_slice(&inner.ids[..keep]);
        seq.offsets.extend_from_slice(&inner.offsets[..keep]);
        seq.ids.push(self.special_tokens.eos);
        seq.offsets.push((end, end));
        seq
    }

    /// Split a long record into BOS/EOS-wrapped windows of at most `max_len`.
    pub fn encode_chunked(&self, raw: &[u8], max_len: usize) -> Vec<TokenSequence> {
        let inner = self.encode(raw);
        let width = max_len.saturating_sub(2).max(1);
        inner
            .ids
            .chunks(width)
            .zip(inner.offsets.chunks(width))
            .map(|(ids, offs)| {
                let (s, e) = (offs[0].0, offs[offs.len() - 1].1);
                let mut seq = TokenSequence::default();
                seq.ids.push(self.special_tokens.bos);
                seq.offsets.push((s, s));
                seq.ids.extend_from_slice(ids);
                seq.offsets.extend_from_slice(offs);
                seq.ids.push(self.special_tokens.eos);
                seq.offsets.push((e, e));
                seq
            })
            .collect()
    }

    pub fn decode(&self, ids: &[TokenId]) -> Result<Vec<u8>, TokenizerError> {
        let mut out = Vec::new();
        for &id in ids {
            let bytes = self
                .vocab
                .get(id as usize)
                .ok_or(TokenizerError::UnknownTokenId(id))?;
            out.extend_from_slice(bytes);
        }
        Ok(out)
    }

    /// Ids whose bytes, once surrounding whitespace is trimmed, consist only
    /// of characters from `charset`. Stored into `delimiter_ids`.
    pub fn classify_delimiters(&mut self, charset: &str) -> BTreeSet<TokenId> {
        let allowed: HashSet<u8> = charset.bytes().collect();
        let ids: BTreeSet<TokenId> = self
            .vocab
            .iter()
            .enumerate()
            .filter(|&(id, _)| !is_special(id as TokenId))
            .filter(|(_, bytes)| bytes.trim_ascii().iter().all(|b| allowed.contains(b)))
            .map(|(id, _)| id as TokenId)
            .collect();
        self.delimiter_ids = ids.clone();
        ids
    }

    /// Comma-separated token strings, whitespace tokens omitted.
    pub fn render_tokens(&self, seq: &TokenSequence) -> String {
        seq.ids
            .iter()
            .filter_map(|&id| self.token_bytes(id))
            .map(|b| String::from_utf8_lossy(b.trim_ascii()).into_owned())
            .filter(|s| !s.is_empty())
            .collect::<Vec<_>>()
            .join(", ")
    }

    pub fn to_json(&self) -> String {
        let file = TokenizerFile {
            vocab: self.vocab.clone(),
            merges: self.merges.clone(),
            special_tokens: self.special_tokens,
            delimiter_ids: self.delimiter_ids.iter().copied().collect(),
            version: 1,
        };
        serde_json::to_string(&file).expect("tokenizer serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, TokenizerError> {
        let file: TokenizerFile =
            serde_json::from_str(text).map_err(|e| TokenizerError::Corrupt(e.to_string()))?;
        if file.version != 1 {
            return Err(TokenizerError::BadVersion(file.version));
        }
        if file.special_tokens != SpecialTokens::default() {
            return Err(TokenizerError::Corrupt("non-standard special token ids".into()));
        }
        let mut model = Self::from_merges(file.merges)?;
        if model.vocab != file.vocab {
            return Err(TokenizerError::Corrupt("vocabulary does not match merge replay".into()));
        }
        for &id in &file.delimiter_ids {
            if id as usize >= model.vocab.len() || is_special(id) {
                return Err(TokenizerError::Corrupt(format!("bad delimiter id {id}")));
            }
        }
        model.delimiter_ids = file.delimiter_ids.into_iter().collect();
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<(), TokenizerError> {
        let mut text = self.to_json();
        text.push('\n');
        io::write_atomic(path, text.as_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, TokenizerError> {
        let text = std::fs::read_to_string(path).map_err(|source| {
            TokenizerError::Io(IoError::Io {
                path: path.display().to_string(),
                source,
            })
        })?;
        Self::from_json(&text)
    }

    /// Learned and byte ids that are neither special nor delimiters.
    pub fn content_ids(&self) -> Vec<TokenId> {
        (0..self.vocab.len() as TokenId)
            .filter(|&id| !is_special(id) && !self.delimiter_ids.contains(&id))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn corpus(lines: &[&str]) -> Vec<LogRecord> {
        lines
            .iter()
            .enumerate()
            .map(|(i, l)| LogRecord::new(format!("{i}"), *l, "s"))
            .collect()
    }

    fn cfg(vocab_size: usize) -> BpeTrainConfig {
        BpeTrainConfig {
            vocab_size,
            ..Default::default()
        }
    }

    /// Recount every pair from scratch each round.
    fn naive_bpe(lines: &[&str], rounds: usize) -> Vec<(Vec<u8>, Vec<u8>)> {
        let mut words: Vec<Vec<Vec<u8>>> = Vec::new();
        for l in lines {
            for (s, e) in pretokenize(l.as_bytes()) {
                words.push(l.as_bytes()[s..e].iter().map(|&b| vec![b]).collect());
            }
        }
        let mut out = Vec::new();
        for _ in 0..rounds {
            let mut counts: HashMap<(Vec<u8>, Vec<u8>), usize> = HashMap::new();
            for w in &words {
                for p in w.windows(2) {
                    *counts.entry((p[0].clone(), p[1].clone())).or_default() += 1;
                }
            }
            let top = counts.values().copied().max().unwrap();
            let best = counts
                .into_iter()
                .filter(|(_, c)| *c == top)
                .map(|(p, _)| p)
                .min()
                .unwrap();
            for w in &mut words {
                let mut merged = Vec::new();
                let mut i = 0;
                while i < w.len() {
                    if i + 1 < w.len() && w[i] == best.0 && w[i + 1] == best.1 {
                        merged.push([w[i].clone(), w[i + 1].clone()].concat());
                        i += 2;
                    } else {
                        merged.push(w[i].clone());
                        i += 1;
                    }
                }
                *w = merged;
            }
            out.push(best);
        }
        out
    }

    fn learned(model: &TokenizerModel) -> Vec<(Vec<u8>, Vec<u8>)> {
        model
            .merges()
            .iter()
            .map(|&(l, r)| {
                (
                    model.token_bytes(l).unwrap().to_vec(),
                    model.token_bytes(r).unwrap().to_vec(),
                )
            })
            .collect()
    }

    #[test]
    fn single_repeated_pair_merges_first() {
        let model = train_bpe(&corpus(&["aaaa aaaa"]), &cfg(FIRST_LEARNED as usize + 1)).unwrap();
        assert_eq!(learned(&model), vec![(b"a".to_vec(), b"a".to_vec())]);
    }

    #[test]
    fn low_lower_lowest_hand_run() {
        let lines = ["low low lower lowest"; 3];
        let model = train_bpe(&corpus(&lines), &cfg(FIRST_LEARNED as usize + 4)).unwrap();
        let expect: Vec<(Vec<u8>, Vec<u8>)> = vec![
            (b"l".to_vec(), b"o".to_vec()),
            (b"lo".to_vec(), b"w".to_vec()),
            (b"low".to_vec(), b"e".to_vec()),
            (b"lowe".to_vec(), b"r".to_vec()),
        ];
        assert_eq!(learned(&model), expect);
        assert_eq!(naive_bpe(&lines, 4), expect);
    }

    #[test]
    fn incremental_counts_match_naive_recount() {
        let lines = [
            "sudo: root : TTY=unknown ; PWD=/ ; USER=root ; COMMAND=/bin/ip",
            "sudo: admin : TTY=pts/1 ; PWD=/home ; USER=root ; COMMAND=/bin/ls",
            "{\"user\":\"root\",\"pwd\":\"/\"}",
        ];
        let model = train_bpe(&corpus(&lines), &cfg(FIRST_LEARNED as usize + 25)).unwrap();
        assert_eq!(learned(&model), naive_bpe(&lines, 25));
    }

    #[test]
    fn too_small_corpus() {
        assert!(matches!(
            train_bpe(&corpus(&["abc"]), &cfg(300)),
            Err(TokenizerError::CorpusTooSmall)
        ));
        assert!(matches!(
            train_bpe(&corpus(&["abc"]), &cfg(100)),
            Err(TokenizerError::VocabTooSmall(100))
        ));
    }

    #[test]
    fn encode_decode_and_offsets() {
        let model = train_bpe(&corpus(&["sudo: root : TTY=unknown"; 4]), &cfg(300)).unwrap();
        let s = b"sudo: root : TTY=unknown";
        let seq = model.encode(s);
        assert_eq!(model.decode(&seq.ids).unwrap(), s);
        let mut pos = 0;
        for &(a, b) in &seq.offsets {
            assert_eq!(a, pos);
            pos = b;
        }
        assert_eq!(pos, s.len());
        assert!(model.encode(b"").is_empty());
        assert_eq!(model.decode(&[]).unwrap(), b"");
        let ab = model.encode(b"su").ids;
        let mut with_pad = vec![PAD];
        with_pad.extend(&ab);
        assert_eq!(model.decode(&with_pad).unwrap(), b"su");
        assert!(matches!(model.decode(&[99_999]), Err(TokenizerError::UnknownTokenId(99_999))));
    }

    #[test]
    fn delimiter_classification_matches_charset_oracle() {
        let lines = ["a=/b =/ =/ {\"k\":\"v\"}, root root"; 3];
        let mut model = train_bpe(&corpus(&lines), &cfg(320)).unwrap();
        let charset = "=/";
        let got = model.classify_delimiters(charset);
        for id in 0..model.vocab_size() as TokenId {
            let bytes = model.token_bytes(id).unwrap();
            let oracle = !is_special(id)
                && bytes
                    .iter()
                    .filter(|b| !b.is_ascii_whitespace())
                    .all(|b| charset.as_bytes().contains(b));
            assert_eq!(got.contains(&id), oracle, "token {:?}", String::from_utf8_lossy(bytes));
        }
        let eq_slash = model.encode(b"=/").ids;
        assert_eq!(eq_slash.len(), 1);
        assert!(got.contains(&eq_slash[0]));

        model.classify_delimiters(DEFAULT_DELIMITERS);
        for ch in ["\"", "{", "}", ":", ","] {
            assert!(model.is_delimiter(model.encode(ch.as_bytes()).ids[0]));
        }
        let root = model.encode(b"root").ids;
        assert_eq!(root.len(), 1);
        assert!(!model.is_delimiter(root[0]));
    }

    #[test]
    fn json_round_trip() {
        let mut model = train_bpe(&corpus(&["low low lower lowest"; 3]), &cfg(270)).unwrap();
        model.classify_delimiters(DEFAULT_DELIMITERS);
        let text = model.to_json();
        let back = TokenizerModel::from_json(&text).unwrap();
        assert_eq!(back, model);
        assert_eq!(back.to_json(), text);
    }

    #[test]
    fn chunked_encoding_covers_everything() {
        let model = train_bpe(&corpus(&["abc abc abc"]), &cfg(270)).unwrap();
        let raw = b"abc abd abe abf abg";
        let chunks = model.encode_chunked(raw, 6);
        assert!(chunks.iter().all(|c| c.len() <= 6));
        let ids: Vec<TokenId> = chunks
            .iter()
            .flat_map(|c| c.ids[1..c.len() - 1].to_vec())
            .collect();
        assert_eq!(model.decode(&ids).unwrap(), raw);
    }
}
