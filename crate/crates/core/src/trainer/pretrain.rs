use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::optim::{clip_global_norm, AdamW};
use super::TrainError;
use crate::corpus::LogRecord;
use crate::encoder::{plan_masks, save_checkpoint, Checkpoint, EncoderError, EncoderModel};
use crate::io;
use crate::seed;
use crate::tokenizer::{is_special, TokenId, TokenizerModel};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub max_steps: u64,
    pub learning_rate: f64,
    pub warmup_steps: u64,
    pub weight_decay: f64,
    pub grad_clip_norm: f64,
    pub seed: u64,
    /// Steps between checkpoints; 0 disables intermediate checkpoints.
    pub checkpoint_every: u64,
    /// Steps between progress log lines; 0 disables them.
    pub eval_every: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 16,
            max_steps: 2000,
            learning_rate: 1e-3,
            warmup_steps: 100,
            weight_decay: 0.01,
            grad_clip_norm: 1.0,
            seed: 0,
            checkpoint_every: 0,
            eval_every: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::BadConfig(m.to_string()));
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        if self.warmup_steps > self.max_steps {
            return bad("warmup_steps must not exceed max_steps");
        }
        if self.learning_rate < 0.0 || !self.learning_rate.is_finite() {
            return bad("learning_rate must be finite and non-negative");
        }
        if self.grad_clip_norm <= 0.0 {
            return bad("grad_clip_norm must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossPoint {
    pub step: u64,
    pub loss: f64,
    pub lr: f64,
}

/// Linear warmup to the peak rate, then linear decay to zero.
pub(crate) fn schedule(config: &TrainConfig, step: u64) -> f64 {
    if step < config.warmup_steps {
        config.learning_rate * (step + 1) as f64 / config.warmup_steps as f64
    } else {
        let span = (config.max_steps - config.warmup_steps).max(1) as f64;
        config.learning_rate * config.max_steps.saturating_sub(step) as f64 / span
    }
}

/// Tokenized training windows plus the masking vocabulary.
#[derive(Debug, Clone)]
pub struct PreparedExamples {
    pub sequences: Vec<Vec<TokenId>>,
    /// Windows dropped because every token was a delimiter or special.
    pub skipped: usize,
    pub delimiter_ids: BTreeSet<TokenId>,
    pub random_pool: Vec<TokenId>,
}

/// Tokenize records into BOS/EOS windows no longer than `max_seq_len`.
pub fn prepare_examples(tokenizer: &TokenizerModel, records: &[LogRecord], max_seq_len: usize) -> PreparedExamples {
    let delimiter_ids = tokenizer.delimiter_ids.clone();
    let mut sequences = Vec::new();
    let mut skipped = 0;
    for record in records {
        for seq in tokenizer.encode_chunked(record.raw.as_bytes(), max_seq_len) {
            if seq.ids.iter().any(|id| !is_special(*id) && !delimiter_ids.contains(id)) {
                sequences.push(seq.ids);
            } else {
                skipped += 1;
            }
        }
    }
    PreparedExamples {
        sequences,
        skipped,
        random_pool: tokenizer.content_ids(),
        delimiter_ids,
    }
}

/// Stateful pretraining loop. Every batch, mask and dropout draw is a pure
/// function of `(seed, step)`, so resuming from a checkpoint replays the
/// uninterrupted run exactly.
pub struct Trainer<'a> {
    pub model: EncoderModel,
    pub optimizer: AdamW,
    pub step: u64,
    pub curve: Vec<LossPoint>,
    config: TrainConfig,
    data: &'a PreparedExamples,
    decay: Vec<bool>,
    epoch_cache: Vec<(u64, Vec<usize>)>,
}

fn decay_mask(model: &EncoderModel) -> Vec<bool> {
    let mut mask = vec![false; model.layout.total];
    for spec in &model.layout.specs {
        if spec.name.ends_with(".weight") {
            mask[spec.range()].fill(true);
        }
    }
    mask
}

impl<'a> Trainer<'a> {
    pub fn new(model: EncoderModel, config: TrainConfig, data: &'a PreparedExamples) -> Result<Self, TrainError> {
        config.validate()?;
        if data.sequences.is_empty() {
            return Err(TrainError::NoExamples);
        }
        let optimizer = AdamW::new(model.layout.total);
        Ok(Self {
            decay: decay_mask(&model),
            model,
            optimizer,
            step: 0,
            curve: Vec::new(),
            config,
            data,
            epoch_cache: Vec::new(),
        })
    }

    pub fn resume(checkpoint: Checkpoint, config: TrainConfig, data: &'a PreparedExamples) -> Result<Self, TrainError> {
        let mut trainer = Self::new(checkpoint.model, config, data)?;
        trainer.step = checkpoint.step;
        let total = trainer.model.layout.total;
        for (name, values) in checkpoint.extra {
            if values.len() != total {
                return Err(EncoderError::Checkpoint(format!("{name} has the wrong length")).into());
            }
            match name.as_str() {
                "adam.m" => trainer.optimizer.m = values,
                "adam.v" => trainer.optimizer.v = values,
                _ => {}
            }
        }
        trainer.optimizer.step = checkpoint.metadata["adam_step"].as_u64().unwrap_or(checkpoint.step);
        Ok(trainer)
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            model: self.model.clone(),
            step: self.step,
            extra: vec![
                ("adam.m".into(), self.optimizer.m.clone()),
                ("adam.v".into(), self.optimizer.v.clone()),
            ],
            metadata: serde_json::json!({
                "adam_step": self.optimizer.step,
                "train_config": self.config,
            }),
        }
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn lr_at(&self, step: u64) -> f64 {
        schedule(&self.config, step)
    }

    fn example_index(&mut self, global: u64) -> usize {
        let n = self.data.sequences.len() as u64;
        let epoch = global / n;
        if !self.epoch_cache.iter().any(|(e, _)| *e == epoch) {
            let mut order: Vec<usize> = (0..n as usize).collect();
            let epoch_seed = seed::derive_index(seed::derive(self.config.seed, "epoch"), epoch);
            order.shuffle(&mut seed::rng(epoch_seed));
            if self.epoch_cache.len() >= 2 {
                self.epoch_cache.remove(0);
            }
            self.epoch_cache.push((epoch, order));
        }
        let (_, order) = self.epoch_cache.iter().find(|(e, _)| *e == epoch).expect("cached epoch");
        order[(global % n) as usize]
    }

    /// Run one optimizer step and record its loss.
    pub fn train_step(&mut self) -> Result<LossPoint, TrainError> {
        let step = self.step;
        let batch = self.config.batch_size as u64;
        let mask_stream = seed::derive(self.config.seed, "mask");
        let dropout_stream = seed::derive(self.config.seed, "dropout");

        let mut items = Vec::with_capacity(batch as usize);
        for i in 0..batch {
            let global = step * batch + i;
            let idx = self.example_index(global);
            let ids = &self.data.sequences[idx];
            let mut rng = seed::rng(seed::derive_index(mask_stream, global));
            let plan = plan_masks(
                ids,
                &self.data.delimiter_ids,
                &self.data.random_pool,
                &self.model.config,
                &mut rng,
            )?;
            items.push((global, idx, plan));
        }
        let normalizer: usize = items.iter().map(|(_, _, p)| p.len()).sum();
        let normalizer = normalizer as f64;

        let model = &self.model;
        let data = self.data;
        let total = model.layout.total;
        let mut grads = vec![0.0; total];
        let mut nll = 0.0;
        // Waves bound memory; summing in item order keeps results
        // independent of the thread count.
        let wave = rayon::current_num_threads().max(1);
        for chunk in items.chunks(wave) {
            let parts: Vec<Result<(f64, Vec<f64>), EncoderError>> = chunk
                .par_iter()
                .map(|(global, idx, plan)| {
                    let mut g = vec![0.0; total];
                    let mut drop_rng = seed::rng(seed::derive_index(dropout_stream, *global));
                    let loss = model.accumulate_mlm_grad(&data.sequences[*idx], plan, normalizer, &mut g, Some(&mut drop_rng))?;
                    Ok((loss, g))
                })
                .collect();
            for part in parts {
                let (loss, g) = part?;
                nll += loss;
                for (acc, x) in grads.iter_mut().zip(&g) {
                    *acc += x;
                }
            }
        }
        let loss = nll / normalizer;
        if !loss.is_finite() || grads.iter().any(|g| !g.is_finite()) {
            return Err(TrainError::NonFiniteLoss { step });
        }
        clip_global_norm(&mut grads, self.config.grad_clip_norm);
        let lr = self.lr_at(step);
        self.optimizer.update(
            &mut self.model.params,
            &grads,
            lr,
            self.config.weight_decay,
            &self.decay,
            None,
            true,
        );
        self.step += 1;
        let point = LossPoint { step, loss, lr };
        self.curve.push(point);
        Ok(point)
    }

    /// Train until `self.step == until`, checkpointing into `checkpoint_dir`
    /// at the configured cadence.
    pub fn run(&mut self, until: u64, checkpoint_dir: Option<&Path>) -> Result<(), TrainError> {
        let until = until.min(self.config.max_steps);
        while self.step < until {
            let point = self.train_step()?;
            let every = self.config.eval_every;
            if every > 0 && self.step % every == 0 {
                let window = &self.curve[self.curve.len().saturating_sub(every as usize)..];
                let mean = window.iter().map(|p| p.loss).sum::<f64>() / window.len() as f64;
                log::info!("step {} loss {:.4} (window mean {:.4}) lr {:.2e}", point.step, point.loss, mean, point.lr);
            }
            if let Some(dir) = checkpoint_dir {
                let every = self.config.checkpoint_every;
                if every > 0 && self.step % every == 0 {
                    save_checkpoint(dir, &self.checkpoint())?;
                }
            }
        }
        Ok(())
    }
}

/// Pretrain `model` on the records' training split (all records when none
/// are labeled) and return it with the per-step loss curve.
pub fn pretrain(
    model: EncoderModel,
    records: &[LogRecord],
    tokenizer: &TokenizerModel,
    config: TrainConfig,
) -> Result<(EncoderModel, Vec<LossPoint>), TrainError> {
    use crate::corpus::Split;
    let train: Vec<LogRecord> = if records.iter().any(|r| r.split == Split::Train) {
        records.iter().filter(|r| r.split == Split::Train).cloned().collect()
    } else {
        records.to_vec()
    };
    let data = prepare_examples(tokenizer, &train, model.config.max_seq_len);
    let max_steps = config.max_steps;
    let mut trainer = Trainer::new(model, config, &data)?;
    trainer.run(max_steps, None)?;
    Ok((trainer.model, trainer.curve))
}

/// CSV with header `step,loss,lr`.
pub fn write_loss_curve(path: &Path, curve: &[LossPoint]) -> Result<(), TrainError> {
    let mut text = String::from("step,loss,lr\n");
    for p in curve {
        writeln!(text, "{},{},{}", p.step, p.loss, p.lr).expect("write to string");
    }
    io::write_atomic(path, text.as_bytes())?;
    Ok(())
}
