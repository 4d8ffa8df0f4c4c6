use std::collections::BTreeSet;

use ndarray::{Array1, Array2, Axis};
use rand::seq::SliceRandom;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::optim::{clip_global_norm, AdamW};
use super::pretrain::schedule;
use super::{TrainConfig, TrainError};
use crate::encoder::{EncoderError, EncoderModel};
use crate::seed;
use crate::tokenizer::TokenId;

/// One labeled example: an ordered set of tokenized logs, oldest first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeSet {
    pub logs: Vec<Vec<TokenId>>,
    pub label: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProbeConfig {
    /// Logs per set; longer sets keep the most recent, shorter ones are
    /// padded with the learned null embedding.
    pub set_size: usize,
    pub train: TrainConfig,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            set_size: 8,
            train: TrainConfig {
                batch_size: 16,
                max_steps: 200,
                learning_rate: 1e-3,
                warmup_steps: 10,
                weight_decay: 0.0,
                ..TrainConfig::default()
            },
        }
    }
}

/// Linear classifier over `set_size` concatenated embeddings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeHead {
    /// `classes.len()` rows of `input_dim` weights.
    pub weights: Vec<Vec<f64>>,
    pub bias: Vec<f64>,
    pub classes: Vec<String>,
    pub set_size: usize,
    /// Stand-in for missing slots in short sets.
    pub null_embedding: Vec<f64>,
}

impl ProbeHead {
    fn new(classes: Vec<String>, set_size: usize, dim: usize, seed_value: u64) -> Self {
        let mut rng = seed::named_rng(seed_value, "probe-head");
        let normal = Normal::new(0.0, 0.02).expect("valid std");
        let input_dim = set_size * dim;
        let weights = (0..classes.len())
            .map(|_| (0..input_dim).map(|_| normal.sample(&mut rng)).collect())
            .collect();
        let null_embedding = (0..dim).map(|_| normal.sample(&mut rng)).collect();
        Self {
            weights,
            bias: vec![0.0; classes.len()],
            classes,
            set_size,
            null_embedding,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.weights.first().map_or(0, Vec::len)
    }

    pub fn logits(&self, features: &[f64]) -> Vec<f64> {
        self.weights
            .iter()
            .zip(&self.bias)
            .map(|(w, b)| b + w.iter().zip(features).map(|(a, x)| a * x).sum::<f64>())
            .collect()
    }

    /// Index into `classes` of the highest logit (first on ties).
    pub fn predict(&self, features: &[f64]) -> usize {
        argmax(&self.logits(features))
    }

    /// Concatenate per-log embeddings into one feature vector, keeping the
    /// last `set_size` and padding the front with the null embedding.
    pub fn features(&self, embeddings: &[Vec<f64>]) -> Vec<f64> {
        let keep = &embeddings[embeddings.len().saturating_sub(self.set_size)..];
        let mut out = Vec::with_capacity(self.input_dim());
        for _ in keep.len()..self.set_size {
            out.extend_from_slice(&self.null_embedding);
        }
        for e in keep {
            out.extend_from_slice(e);
        }
        out
    }

    pub fn predict_set(&self, model: &EncoderModel, set: &ProbeSet) -> Result<usize, TrainError> {
        let keep = &set.logs[set.logs.len().saturating_sub(self.set_size)..];
        let embeddings = keep
            .iter()
            .map(|ids| model.embed_ids(ids).map(|v| v.to_vec()))
            .collect::<Result<Vec<_>, EncoderError>>()?;
        Ok(self.predict(&self.features(&embeddings)))
    }

    /// Fraction of sets whose predicted class matches the label.
    pub fn accuracy(&self, model: &EncoderModel, sets: &[ProbeSet]) -> Result<f64, TrainError> {
        if sets.is_empty() {
            return Ok(0.0);
        }
        let correct = sets
            .par_iter()
            .map(|s| Ok(self.classes[self.predict_set(model, s)?] == s.label))
            .collect::<Result<Vec<bool>, TrainError>>()?;
        Ok(correct.iter().filter(|&&c| c).count() as f64 / sets.len() as f64)
    }

    /// Train only the linear layer on fixed feature vectors.
    pub fn fit_features(features: &[Vec<f64>], labels: &[String], config: &TrainConfig) -> Result<Self, TrainError> {
        config.validate()?;
        let classes = class_list(labels)?;
        let dim = features.first().map_or(0, Vec::len);
        let targets: Vec<usize> = labels.iter().map(|l| class_index(&classes, l)).collect();
        let mut head = Self::new(classes, 1, dim, config.seed);
        let mut flat = HeadParams::flatten(&head);
        let decay = flat.decay.clone();
        let mut opt = AdamW::new(flat.values.len());
        let mut stepper = BatchOrder::new(features.len(), config.seed);
        for step in 0..config.max_steps {
            let batch = stepper.batch(step, config.batch_size);
            let mut grads = vec![0.0; flat.values.len()];
            let mut loss = 0.0;
            for &i in &batch {
                let (l, d_logits) = cross_entropy(&head.logits(&features[i]), targets[i]);
                loss += l;
                flat.accumulate(&d_logits, &features[i], batch.len() as f64, &mut grads);
            }
            if !loss.is_finite() {
                return Err(TrainError::NonFiniteLoss { step });
            }
            clip_global_norm(&mut grads, config.grad_clip_norm);
            let lr = schedule(config, step);
            opt.update(&mut flat.values, &grads, lr, config.weight_decay, &decay, None, false);
            flat.write_back(&mut head);
        }
        Ok(head)
    }
}

fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

fn class_list(labels: &[String]) -> Result<Vec<String>, TrainError> {
    let classes: Vec<String> = labels.iter().cloned().collect::<BTreeSet<_>>().into_iter().collect();
    if classes.len() < 2 {
        return Err(TrainError::LabelCardinality(classes.len()));
    }
    Ok(classes)
}

fn class_index(classes: &[String], label: &str) -> usize {
    classes.iter().position(|c| c == label).expect("label drawn from classes")
}

/// Returns the loss and d(loss)/d(logits).
fn cross_entropy(logits: &[f64], target: usize) -> (f64, Vec<f64>) {
    let max = logits.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    let log_z = max + logits.iter().map(|&x| (x - max).exp()).sum::<f64>().ln();
    let mut d: Vec<f64> = logits.iter().map(|&x| (x - log_z).exp()).collect();
    d[target] -= 1.0;
    (log_z - logits[target], d)
}

/// Deterministic per-epoch shuffles of `0..n`.
struct BatchOrder {
    n: usize,
    seed: u64,
    epoch: Option<(u64, Vec<usize>)>,
}

impl BatchOrder {
    fn new(n: usize, seed_value: u64) -> Self {
        Self {
            n,
            seed: seed::derive(seed_value, "probe-epoch"),
            epoch: None,
        }
    }

    fn batch(&mut self, step: u64, size: usize) -> Vec<usize> {
        let n = self.n as u64;
        (0..size as u64)
            .map(|i| {
                let global = step * size as u64 + i;
                let epoch = global / n;
                if self.epoch.as_ref().map(|(e, _)| *e) != Some(epoch) {
                    let mut order: Vec<usize> = (0..self.n).collect();
                    order.shuffle(&mut seed::rng(seed::derive_index(self.seed, epoch)));
                    self.epoch = Some((epoch, order));
                }
                self.epoch.as_ref().expect("set above").1[(global % n) as usize]
            })
            .collect()
    }
}

/// Head weights, bias and null embedding as one flat vector.
struct HeadParams {
    values: Vec<f64>,
    decay: Vec<bool>,
    classes: usize,
    input_dim: usize,
}

impl HeadParams {
    fn flatten(head: &ProbeHead) -> Self {
        let mut values: Vec<f64> = head.weights.iter().flatten().copied().collect();
        let mut decay = vec![true; values.len()];
        values.extend_from_slice(&head.bias);
        values.extend_from_slice(&head.null_embedding);
        decay.resize(values.len(), false);
        Self {
            values,
            decay,
            classes: head.classes.len(),
            input_dim: head.input_dim(),
        }
    }

    fn bias_offset(&self) -> usize {
        self.classes * self.input_dim
    }

    fn null_offset(&self) -> usize {
        self.bias_offset() + self.classes
    }

    /// Adds weight and bias gradients, scaled by `1 / normalizer`.
    fn accumulate(&self, d_logits: &[f64], features: &[f64], normalizer: f64, grads: &mut [f64]) {
        for (k, &dk) in d_logits.iter().enumerate() {
            let dk = dk / normalizer;
            let row = &mut grads[k * self.input_dim..(k + 1) * self.input_dim];
            for (g, x) in row.iter_mut().zip(features) {
                *g += dk * x;
            }
            grads[self.bias_offset() + k] += dk;
        }
    }

    /// d(loss)/d(features), scaled by `1 / normalizer`.
    fn feature_grad(&self, d_logits: &[f64], normalizer: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.input_dim];
        for (k, &dk) in d_logits.iter().enumerate() {
            let row = &self.values[k * self.input_dim..(k + 1) * self.input_dim];
            for (o, w) in out.iter_mut().zip(row) {
                *o += dk / normalizer * w;
            }
        }
        out
    }

    fn write_back(&self, head: &mut ProbeHead) {
        for (k, row) in head.weights.iter_mut().enumerate() {
            row.copy_from_slice(&self.values[k * self.input_dim..(k + 1) * self.input_dim]);
        }
        head.bias.copy_from_slice(&self.values[self.bias_offset()..self.null_offset()]);
        let dim = head.null_embedding.len();
        head.null_embedding
            .copy_from_slice(&self.values[self.null_offset()..self.null_offset() + dim]);
    }
}

/// Finetune the last encoder block and a linear head on labeled log sets.
///
/// Everything below the last block, the final layer norm and the MLM head
/// stay bit-identical. Hidden states entering the last block are computed
/// once up front since the layers producing them never change.
pub fn finetune_probe(
    model: &EncoderModel,
    sets: &[ProbeSet],
    config: &ProbeConfig,
) -> Result<(EncoderModel, ProbeHead), TrainError> {
    let train = &config.train;
    train.validate()?;
    if config.set_size == 0 {
        return Err(TrainError::BadConfig("set_size must be positive".into()));
    }
    if let Some(i) = sets.iter().position(|s| s.logs.is_empty()) {
        return Err(TrainError::EmptySet(i));
    }
    let labels: Vec<String> = sets.iter().map(|s| s.label.clone()).collect();
    let classes = class_list(&labels)?;
    let targets: Vec<usize> = labels.iter().map(|l| class_index(&classes, l)).collect();

    let dim = model.config.hidden_dim;
    let last = model.config.num_layers - 1;
    let s = config.set_size;
    let mut model = model.clone();
    let mut head = ProbeHead::new(classes, s, dim, train.seed);

    // Frozen prefix: hidden states entering the last block, per kept log.
    let cached: Vec<Vec<(Vec<TokenId>, Array2<f64>)>> = sets
        .par_iter()
        .map(|set| {
            set.logs[set.logs.len().saturating_sub(s)..]
                .iter()
                .map(|ids| {
                    if EncoderModel::content_positions(ids).is_empty() {
                        return Err(EncoderError::EmptyContent);
                    }
                    let h = model.hidden_before(ids, &EncoderModel::pad_mask(ids), last)?;
                    Ok((ids.clone(), h))
                })
                .collect::<Result<Vec<_>, EncoderError>>()
        })
        .collect::<Result<_, _>>()?;

    let total = model.layout.total;
    let mut active = vec![false; total];
    let mut decay = vec![false; total];
    for &t in &model.layout.layer_tensor_ids(last) {
        let spec = &model.layout.specs[t];
        active[spec.range()].fill(true);
        decay[spec.range()].fill(spec.name.ends_with(".weight"));
    }
    let mut model_opt = AdamW::new(total);
    let mut flat = HeadParams::flatten(&head);
    let head_decay = flat.decay.clone();
    let mut head_opt = AdamW::new(flat.values.len());
    let mut order = BatchOrder::new(sets.len(), train.seed);

    for step in 0..train.max_steps {
        let batch = order.batch(step, train.batch_size);
        let norm = batch.len() as f64;
        let mut model_grads = vec![0.0; total];
        let mut head_grads = vec![0.0; flat.values.len()];
        let mut loss = 0.0;
        let wave = rayon::current_num_threads().max(1);
        for chunk in batch.chunks(wave) {
            let parts = chunk
                .par_iter()
                .map(|&i| set_gradient(&model, &head, &flat, &cached[i], targets[i], norm, last))
                .collect::<Result<Vec<_>, EncoderError>>()?;
            for (l, mg, hg) in parts {
                loss += l;
                for (a, b) in model_grads.iter_mut().zip(&mg) {
                    *a += b;
                }
                for (a, b) in head_grads.iter_mut().zip(&hg) {
                    *a += b;
                }
            }
        }
        if !loss.is_finite() {
            return Err(TrainError::NonFiniteLoss { step });
        }
        // Only last-block gradients count toward the clipping norm.
        for (g, &a) in model_grads.iter_mut().zip(&active) {
            if !a {
                *g = 0.0;
            }
        }
        let mut joint: Vec<f64> = model_grads.iter().chain(&head_grads).copied().collect();
        clip_global_norm(&mut joint, train.grad_clip_norm);
        let (mg, hg) = joint.split_at(total);
        let lr = schedule(train, step);
        model_opt.update(&mut model.params, mg, lr, train.weight_decay, &decay, Some(&active), true);
        head_opt.update(&mut flat.values, hg, lr, train.weight_decay, &head_decay, None, false);
        flat.write_back(&mut head);
        if train.eval_every > 0 && (step + 1) % train.eval_every == 0 {
            log::info!("probe step {step} loss {:.4}", loss / norm);
        }
    }
    Ok((model, head))
}

/// Loss, model gradient and head gradient for one set.
fn set_gradient(
    model: &EncoderModel,
    head: &ProbeHead,
    flat: &HeadParams,
    logs: &[(Vec<TokenId>, Array2<f64>)],
    target: usize,
    normalizer: f64,
    last: usize,
) -> Result<(f64, Vec<f64>, Vec<f64>), EncoderError> {
    let dim = model.config.hidden_dim;
    let mut traces = Vec::with_capacity(logs.len());
    let mut pooled = Vec::with_capacity(logs.len());
    for (ids, hidden) in logs {
        let cache = model.trace_from(last, hidden.clone(), ids, &EncoderModel::pad_mask(ids))?;
        let positions = EncoderModel::content_positions(ids);
        let mean: Array1<f64> = cache
            .states
            .select(Axis(0), &positions)
            .mean_axis(Axis(0))
            .expect("non-empty content");
        pooled.push(mean.to_vec());
        traces.push((cache, positions));
    }
    let features = head.features(&pooled);
    let (loss, d_logits) = cross_entropy(&head.logits(&features), target);
    let mut head_grads = vec![0.0; flat.values.len()];
    flat.accumulate(&d_logits, &features, normalizer, &mut head_grads);
    let d_features = flat.feature_grad(&d_logits, normalizer);
    let pad_slots = head.set_size - logs.len();
    for slot in 0..pad_slots {
        for (j, g) in d_features[slot * dim..(slot + 1) * dim].iter().enumerate() {
            head_grads[flat.null_offset() + j] += g;
        }
    }
    let mut model_grads = vec![0.0; model.layout.total];
    for (k, (cache, positions)) in traces.iter().enumerate() {
        let slot = pad_slots + k;
        let d_pool = &d_features[slot * dim..(slot + 1) * dim];
        let mut d_states = Array2::zeros(cache.states.raw_dim());
        let share = 1.0 / positions.len() as f64;
        for &p in positions {
            for (x, g) in d_states.row_mut(p).iter_mut().zip(d_pool) {
                *x = g * share;
            }
        }
        model.backward(cache, &d_states, &mut model_grads, last);
    }
    Ok((loss, model_grads, head_grads))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trainer::pretrain::tests::{five_template_corpus, tiny_setup};

    fn blobs(n: usize, seed_value: u64, margin: f64) -> (Vec<Vec<f64>>, Vec<String>) {
        let mut rng = seed::rng(seed_value);
        let noise = Normal::new(0.0, 0.3).unwrap();
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for i in 0..n {
            let sign = if i % 2 == 0 { 1.0 } else { -1.0 };
            let x: Vec<f64> = (0..8)
                .map(|d| if d == 0 { sign * margin } else { 0.0 } + noise.sample(&mut rng))
                .collect();
            xs.push(x);
            ys.push(if sign > 0.0 { "pos" } else { "neg" }.to_string());
        }
        (xs, ys)
    }

    /// Classic perceptron; returns true once an epoch makes no mistakes.
    fn perceptron_separates(xs: &[Vec<f64>], ys: &[String]) -> bool {
        let mut w = vec![0.0; xs[0].len() + 1];
        for _ in 0..1000 {
            let mut mistakes = 0;
            for (x, y) in xs.iter().zip(ys) {
                let t = if y == "pos" { 1.0 } else { -1.0 };
                let s = w[0] + w[1..].iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
                if t * s <= 0.0 {
                    mistakes += 1;
                    w[0] += t;
                    for (a, b) in w[1..].iter_mut().zip(x) {
                        *a += t * b;
                    }
                }
            }
            if mistakes == 0 {
                return true;
            }
        }
        false
    }

    fn head_config(steps: u64) -> TrainConfig {
        TrainConfig {
            batch_size: 16,
            max_steps: steps,
            learning_rate: 0.05,
            warmup_steps: 0,
            weight_decay: 0.0,
            ..Default::default()
        }
    }

    #[test]
    fn separable_blobs_reach_full_training_accuracy() {
        let (xs, ys) = blobs(100, 1, 3.0);
        assert!(perceptron_separates(&xs, &ys));
        let head = ProbeHead::fit_features(&xs, &ys, &head_config(200)).unwrap();
        let correct = xs.iter().zip(&ys).filter(|(x, y)| head.classes[head.predict(x)] == **y).count();
        assert_eq!(correct, xs.len());
    }

    #[test]
    fn permuted_labels_give_chance_accuracy() {
        let (xs, mut ys) = blobs(200, 2, 3.0);
        ys.shuffle(&mut seed::rng(3));
        let (train_x, test_x) = xs.split_at(100);
        let (train_y, test_y) = ys.split_at(100);
        let head = ProbeHead::fit_features(train_x, train_y, &head_config(200)).unwrap();
        let correct = test_x
            .iter()
            .zip(test_y)
            .filter(|(x, y)| head.classes[head.predict(x)] == **y)
            .count();
        let acc = correct as f64 / 100.0;
        assert!((acc - 0.5).abs() <= 0.1, "accuracy {acc}");
    }

    fn labeled_sets(tok: &crate::tokenizer::TokenizerModel, n: usize) -> Vec<ProbeSet> {
        // Sets of logs from template 0 or template 3, labeled by template.
        let corpus = five_template_corpus(n * 10);
        (0..n)
            .map(|i| {
                let want = if i % 2 == 0 { 0 } else { 3 };
                let logs = corpus
                    .iter()
                    .enumerate()
                    .filter(|(j, _)| j % 5 == want)
                    .skip(i)
                    .take(1 + i % 10)
                    .map(|(_, r)| tok.encode_for_model(r.raw.as_bytes(), 32).ids)
                    .collect();
                ProbeSet {
                    logs,
                    label: if want == 0 { "login" } else { "closed" }.to_string(),
                }
            })
            .collect()
    }

    fn probe_config(steps: u64) -> ProbeConfig {
        ProbeConfig {
            set_size: 4,
            train: TrainConfig {
                batch_size: 8,
                max_steps: steps,
                learning_rate: 1e-2,
                warmup_steps: 0,
                seed: 9,
                ..Default::default()
            },
        }
    }

    #[test]
    fn zero_steps_leave_the_model_untouched() {
        let (tok, _, config) = tiny_setup(20);
        let model = EncoderModel::new(config, 1).unwrap();
        let sets = labeled_sets(&tok, 10);
        let (tuned, head) = finetune_probe(&model, &sets, &probe_config(0)).unwrap();
        assert_eq!(tuned.params, model.params);
        assert_eq!(head.input_dim(), 4 * 16);
        assert_eq!(head.classes, vec!["closed".to_string(), "login".to_string()]);
    }

    #[test]
    fn only_the_last_block_changes_and_the_probe_learns() {
        let (tok, _, config) = tiny_setup(20);
        let model = EncoderModel::new(config, 2).unwrap();
        let sets = labeled_sets(&tok, 40);
        let (tuned, head) = finetune_probe(&model, &sets, &probe_config(60)).unwrap();
        let last: BTreeSet<usize> = model.layout.layer_tensor_ids(model.config.num_layers - 1).into_iter().collect();
        let mut moved = false;
        for (t, spec) in model.layout.specs.iter().enumerate() {
            let before = &model.params[spec.range()];
            let after = &tuned.params[spec.range()];
            if last.contains(&t) {
                moved |= before != after;
            } else {
                assert!(
                    before.iter().zip(after).all(|(a, b)| a.to_bits() == b.to_bits()),
                    "{} changed",
                    spec.name
                );
            }
        }
        assert!(moved);
        assert_eq!(head.accuracy(&tuned, &sets).unwrap(), 1.0);
    }

    #[test]
    fn probe_input_errors() {
        let (tok, _, config) = tiny_setup(20);
        let model = EncoderModel::new(config, 3).unwrap();
        let mut sets = labeled_sets(&tok, 4);
        for s in &mut sets {
            s.label = "same".into();
        }
        assert!(matches!(
            finetune_probe(&model, &sets, &probe_config(1)),
            Err(TrainError::LabelCardinality(1))
        ));
        sets[1].label = "other".into();
        sets[2].logs.clear();
        assert!(matches!(finetune_probe(&model, &sets, &probe_config(1)), Err(TrainError::EmptySet(2))));
    }

    #[test]
    fn features_keep_most_recent_and_pad_front() {
        let head = ProbeHead {
            weights: vec![vec![0.0; 6]; 2],
            bias: vec![0.0; 2],
            classes: vec!["a".into(), "b".into()],
            set_size: 3,
            null_embedding: vec![9.0, 9.0],
        };
        let e = |x: f64| vec![x, x];
        assert_eq!(head.features(&[e(1.0)]), vec![9.0, 9.0, 9.0, 9.0, 1.0, 1.0]);
        assert_eq!(
            head.features(&[e(1.0), e(2.0), e(3.0), e(4.0)]),
            vec![2.0, 2.0, 3.0, 3.0, 4.0, 4.0]
        );
    }
}
