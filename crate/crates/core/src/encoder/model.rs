use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis, Zip};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::masking::MaskPlan;
use super::params::ParamLayout;
use super::{EncoderConfig, EncoderError};
use crate::seed::{self, Rng};
use crate::tokenizer::{TokenId, BOS, EOS, MASK, PAD};

const LN_EPS: f64 = 1e-5;
const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)

/// Pooling applied by [`EncoderModel::embed`].
pub const POOLING: &str = "mean-of-content-tokens";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Embedding {
    pub source_id: String,
    pub vector: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderModel {
    pub config: EncoderConfig,
    pub layout: ParamLayout,
    pub params: Vec<f64>,
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub struct ForwardOutput {
    pub token_states: Array2<f64>,
    pub mlm_logits: Array2<f64>,
}

/// Per-sequence MLM loss: mean negative log-likelihood over plan positions.
#[derive(Debug, Clone, PartialEq)]
pub struct MlmLoss {
    pub loss: f64,
    pub token_logprobs: Vec<f64>,
    pub predictions: Vec<TokenId>,
}

#[derive(Debug, Clone)]
struct NormCache {
    xhat: Array2<f64>,
    inv_std: Array1<f64>,
}

#[derive(Debug, Clone)]
struct LayerCache {
    ln1: NormCache,
    h1: Array2<f64>,
    qkv: Array2<f64>,
    probs: Vec<Array2<f64>>,
    ctx: Array2<f64>,
    drop_attn: Option<Array2<f64>>,
    ln2: NormCache,
    h2: Array2<f64>,
    ffn_pre: Array2<f64>,
    ffn_act: Array2<f64>,
    drop_ffn: Option<Array2<f64>>,
}

/// Activations retained from a forward pass for backpropagation.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    ids: Vec<TokenId>,
    first_layer: usize,
    drop_embed: Option<Array2<f64>>,
    layers: Vec<LayerCache>,
    final_ln: NormCache,
    /// Final-layer token states (after the closing layer norm).
    pub states: Array2<f64>,
}

impl ForwardCache {
    /// Attention probabilities of one head, rows are queries.
    pub fn attention(&self, layer: usize, head: usize) -> &Array2<f64> {
        &self.layers[layer - self.first_layer].probs[head]
    }
}

fn layer_norm(x: &Array2<f64>, gain: ArrayView1<f64>, bias: ArrayView1<f64>) -> (Array2<f64>, NormCache) {
    let d = x.ncols() as f64;
    let mean = x.sum_axis(Axis(1)) / d;
    let centered = x - &mean.view().insert_axis(Axis(1));
    let var = centered.mapv(|v| v * v).sum_axis(Axis(1)) / d;
    let inv_std = var.mapv(|v| 1.0 / (v + LN_EPS).sqrt());
    let xhat = centered * &inv_std.view().insert_axis(Axis(1));
    let y = &xhat * &gain + &bias;
    (y, NormCache { xhat, inv_std })
}

/// Returns dx; accumulates gain and bias gradients.
fn layer_norm_backward(
    dy: &Array2<f64>,
    cache: &NormCache,
    gain: ArrayView1<f64>,
    dgain: &mut [f64],
    dbias: &mut [f64],
) -> Array2<f64> {
    let d = dy.ncols() as f64;
    for ((g, b), (col_dy, col_x)) in dgain
        .iter_mut()
        .zip(dbias.iter_mut())
        .zip(dy.columns().into_iter().zip(cache.xhat.columns()))
    {
        *g += col_dy.dot(&col_x);
        *b += col_dy.sum();
    }
    let dxhat = dy * &gain;
    let sum_dxhat = dxhat.sum_axis(Axis(1));
    let sum_dxhat_xhat = (&dxhat * &cache.xhat).sum_axis(Axis(1));
    let mut dx = dxhat * d;
    dx -= &sum_dxhat.view().insert_axis(Axis(1));
    dx -= &(&cache.xhat * &sum_dxhat_xhat.view().insert_axis(Axis(1)));
    dx *= &(&cache.inv_std / d).view().insert_axis(Axis(1));
    dx
}

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + 0.044_715 * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let t = (GELU_C * (x + 0.044_715 * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * 0.044_715 * x * x)
}

fn dropout_mask(rows: usize, cols: usize, rate: f64, rng: Option<&mut Rng>) -> Option<Array2<f64>> {
    let rng = rng?;
    if rate <= 0.0 {
        return None;
    }
    let keep = 1.0 / (1.0 - rate);
    Some(Array2::from_shape_fn((rows, cols), |_| {
        if rng.random::<f64>() < rate {
            0.0
        } else {
            keep
        }
    }))
}

fn add_bias(m: &mut Array2<f64>, bias: ArrayView1<f64>) {
    *m += &bias;
}

fn accumulate_bias(dst: &mut [f64], d: &Array2<f64>) {
    for (g, col) in dst.iter_mut().zip(d.columns()) {
        *g += col.sum();
    }
}

/// Row-wise log-softmax of logits.
pub(crate) fn log_softmax(row: ArrayView1<f64>) -> Array1<f64> {
    let max = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    let lse = max + row.mapv(|v| (v - max).exp()).sum().ln();
    row.mapv(|v| v - lse)
}

fn argmax(row: ArrayView1<f64>) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

impl EncoderModel {
    /// Fresh model with seeded truncated-normal weights.
    pub fn new(config: EncoderConfig, seed: u64) -> Result<Self, EncoderError> {
        config.validate()?;
        let layout = ParamLayout::new(&config);
        let params = layout.init(&mut seed::named_rng(seed, "encoder-init"));
        Ok(Self {
            config,
            layout,
            params,
            seed,
        })
    }

    pub fn from_params(config: EncoderConfig, params: Vec<f64>, seed: u64) -> Result<Self, EncoderError> {
        config.validate()?;
        let layout = ParamLayout::new(&config);
        if params.len() != layout.total {
            return Err(EncoderError::Checkpoint(format!(
                "expected {} parameters, found {}",
                layout.total,
                params.len()
            )));
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(EncoderError::Checkpoint("non-finite parameter".into()));
        }
        Ok(Self {
            config,
            layout,
            params,
            seed,
        })
    }

    pub fn num_parameters(&self) -> usize {
        self.layout.total
    }

    fn check_input(&self, ids: &[TokenId], attention_mask: &[bool]) -> Result<(), EncoderError> {
        if ids.is_empty() {
            return Err(EncoderError::EmptySequence);
        }
        if ids.len() > self.config.max_seq_len {
            return Err(EncoderError::SequenceTooLong {
                len: ids.len(),
                max: self.config.max_seq_len,
            });
        }
        if attention_mask.len() != ids.len() {
            return Err(EncoderError::MaskLength {
                mask: attention_mask.len(),
                len: ids.len(),
            });
        }
        if let Some(&bad) = ids.iter().find(|&&id| id as usize >= self.config.vocab_size) {
            return Err(EncoderError::UnknownToken(bad));
        }
        Ok(())
    }

    /// Attention mask that hides PAD positions.
    pub fn pad_mask(ids: &[TokenId]) -> Vec<bool> {
        ids.iter().map(|&id| id != PAD).collect()
    }

    /// Full forward pass, keeping activations. Dropout is applied only when
    /// `dropout` is given.
    pub fn trace(
        &self,
        ids: &[TokenId],
        attention_mask: &[bool],
        mut dropout: Option<&mut Rng>,
    ) -> Result<ForwardCache, EncoderError> {
        self.check_input(ids, attention_mask)?;
        let (x, drop_embed) = self.input_embeddings(ids, dropout.as_deref_mut());
        Ok(self.run_blocks(0, x, ids, attention_mask, dropout, drop_embed))
    }

    /// Residual stream entering block `layer` (inference mode).
    pub fn hidden_before(&self, ids: &[TokenId], attention_mask: &[bool], layer: usize) -> Result<Array2<f64>, EncoderError> {
        self.check_input(ids, attention_mask)?;
        let (mut x, _) = self.input_embeddings(ids, None);
        for l in 0..layer.min(self.config.num_layers) {
            x = self.block_forward(l, x, attention_mask, None).0;
        }
        Ok(x)
    }

    /// Forward pass resuming from the residual stream entering block
    /// `layer`, as returned by [`Self::hidden_before`].
    pub fn trace_from(
        &self,
        layer: usize,
        hidden: Array2<f64>,
        ids: &[TokenId],
        attention_mask: &[bool],
    ) -> Result<ForwardCache, EncoderError> {
        self.check_input(ids, attention_mask)?;
        Ok(self.run_blocks(layer, hidden, ids, attention_mask, None, None))
    }

    fn input_embeddings(&self, ids: &[TokenId], dropout: Option<&mut Rng>) -> (Array2<f64>, Option<Array2<f64>>) {
        let p = &self.params;
        let lay = &self.layout;
        let d = self.config.hidden_dim;
        let tok = lay.mat(p, lay.token_embedding);
        let mut x = Array2::zeros((ids.len(), d));
        for (t, &id) in ids.iter().enumerate() {
            let mut row = x.row_mut(t);
            row.assign(&tok.row(id as usize));
            if let Some(pe) = lay.position_embedding {
                row += &lay.mat(p, pe).row(t);
            }
        }
        let drop_embed = dropout_mask(ids.len(), d, self.config.dropout_rate, dropout);
        if let Some(m) = &drop_embed {
            x *= m;
        }
        (x, drop_embed)
    }

    fn run_blocks(
        &self,
        first_layer: usize,
        mut x: Array2<f64>,
        ids: &[TokenId],
        attention_mask: &[bool],
        mut dropout: Option<&mut Rng>,
        drop_embed: Option<Array2<f64>>,
    ) -> ForwardCache {
        let lay = &self.layout;
        let p = &self.params;
        let mut layers = Vec::with_capacity(self.config.num_layers - first_layer);
        for l in first_layer..self.config.num_layers {
            let (next, cache) = self.block_forward(l, x, attention_mask, dropout.as_deref_mut());
            x = next;
            layers.push(cache);
        }
        let (states, final_ln) = layer_norm(&x, lay.vec(p, lay.final_gain), lay.vec(p, lay.final_bias));
        ForwardCache {
            ids: ids.to_vec(),
            first_layer,
            drop_embed,
            layers,
            final_ln,
            states,
        }
    }

    fn block_forward(
        &self,
        layer: usize,
        mut x: Array2<f64>,
        attention_mask: &[bool],
        mut dropout: Option<&mut Rng>,
    ) -> (Array2<f64>, LayerCache) {
        let p = &self.params;
        let lay = &self.layout;
        let cfg = &self.config;
        let lt = &lay.layers[layer];
        let (t_len, d) = (x.nrows(), cfg.hidden_dim);
        let rate = cfg.dropout_rate;
        let heads = cfg.num_heads;
        let dh = cfg.head_dim();
        let scale = 1.0 / (dh as f64).sqrt();
        {
            let (h1, ln1) = layer_norm(&x, lay.vec(p, lt.ln1_gain), lay.vec(p, lt.ln1_bias));
            let mut qkv = h1.dot(&lay.mat(p, lt.qkv_weight));
            add_bias(&mut qkv, lay.vec(p, lt.qkv_bias));
            let mut ctx = Array2::zeros((t_len, d));
            let mut probs = Vec::with_capacity(heads);
            for h in 0..heads {
                let q = qkv.slice(s![.., h * dh..(h + 1) * dh]);
                let k = qkv.slice(s![.., d + h * dh..d + (h + 1) * dh]);
                let v = qkv.slice(s![.., 2 * d + h * dh..2 * d + (h + 1) * dh]);
                let mut scores = q.dot(&k.t()) * scale;
                for mut row in scores.rows_mut() {
                    let max = row
                        .iter()
                        .zip(attention_mask)
                        .filter(|(_, &m)| m)
                        .fold(f64::NEG_INFINITY, |a, (&b, _)| a.max(b));
                    let mut total = 0.0;
                    for (s, &m) in row.iter_mut().zip(attention_mask) {
                        *s = if m { (*s - max).exp() } else { 0.0 };
                        total += *s;
                    }
                    if total > 0.0 {
                        row /= total;
                    }
                }
                ctx.slice_mut(s![.., h * dh..(h + 1) * dh]).assign(&scores.dot(&v));
                probs.push(scores);
            }
            let mut attn = ctx.dot(&lay.mat(p, lt.out_weight));
            add_bias(&mut attn, lay.vec(p, lt.out_bias));
            let drop_attn = dropout_mask(t_len, d, rate, dropout.as_deref_mut());
            if let Some(m) = &drop_attn {
                attn *= m;
            }
            x += &attn;

            let (h2, ln2) = layer_norm(&x, lay.vec(p, lt.ln2_gain), lay.vec(p, lt.ln2_bias));
            let mut ffn_pre = h2.dot(&lay.mat(p, lt.ffn_in_weight));
            add_bias(&mut ffn_pre, lay.vec(p, lt.ffn_in_bias));
            let ffn_act = ffn_pre.mapv(gelu);
            let mut ffn = ffn_act.dot(&lay.mat(p, lt.ffn_out_weight));
            add_bias(&mut ffn, lay.vec(p, lt.ffn_out_bias));
            let drop_ffn = dropout_mask(t_len, d, rate, dropout.as_deref_mut());
            if let Some(m) = &drop_ffn {
                ffn *= m;
            }
            x += &ffn;
            let cache = LayerCache {
                ln1,
                h1,
                qkv,
                probs,
                ctx,
                drop_attn,
                ln2,
                h2,
                ffn_pre,
                ffn_act,
                drop_ffn,
            };
            (x, cache)
        }
    }

    /// MLM logits for selected rows of the final states.
    pub fn logits_for(&self, states: ArrayView2<f64>) -> Array2<f64> {
        let mut logits = states.dot(&self.layout.mat(&self.params, self.layout.head_weight));
        add_bias(&mut logits, self.layout.vec(&self.params, self.layout.head_bias));
        logits
    }

    /// Inference forward pass.
    pub fn forward(&self, ids: &[TokenId], attention_mask: &[bool]) -> Result<ForwardOutput, EncoderError> {
        let cache = self.trace(ids, attention_mask, None)?;
        let mlm_logits = self.logits_for(cache.states.view());
        Ok(ForwardOutput {
            token_states: cache.states,
            mlm_logits,
        })
    }

    /// Backpropagate `d_states` (gradient w.r.t. final token states) into
    /// `grads`. Blocks below `first_trainable_layer` and the embeddings are
    /// skipped when `first_trainable_layer > 0`.
    pub fn backward(&self, cache: &ForwardCache, d_states: &Array2<f64>, grads: &mut [f64], first_trainable_layer: usize) {
        let p = &self.params;
        let lay = &self.layout;
        let cfg = &self.config;
        let (t_len, d) = (cache.ids.len(), cfg.hidden_dim);
        let heads = cfg.num_heads;
        let dh = cfg.head_dim();
        let scale = 1.0 / (dh as f64).sqrt();

        let mut dx = {
            let (dg, db) = split_two(grads, lay, lay.final_gain, lay.final_bias);
            layer_norm_backward(d_states, &cache.final_ln, lay.vec(p, lay.final_gain), dg, db)
        };

        for (li, lc) in cache.layers.iter().enumerate().rev() {
            let li = li + cache.first_layer;
            let lt = &lay.layers[li];
            if li < first_trainable_layer {
                return;
            }
            // x_out = x_mid + drop(ffn_out(gelu(ffn_in(ln2(x_mid)))))
            let mut dffn = dx.clone();
            if let Some(m) = &lc.drop_ffn {
                dffn *= m;
            }
            general_mat_mul(1.0, &lc.ffn_act.t(), &dffn, 1.0, &mut lay.mat_mut(grads, lt.ffn_out_weight));
            accumulate_bias(lay.slice_mut(grads, lt.ffn_out_bias), &dffn);
            let mut dpre = dffn.dot(&lay.mat(p, lt.ffn_out_weight).t());
            Zip::from(&mut dpre).and(&lc.ffn_pre).for_each(|g, &x| *g *= gelu_grad(x));
            general_mat_mul(1.0, &lc.h2.t(), &dpre, 1.0, &mut lay.mat_mut(grads, lt.ffn_in_weight));
            accumulate_bias(lay.slice_mut(grads, lt.ffn_in_bias), &dpre);
            let dh2 = dpre.dot(&lay.mat(p, lt.ffn_in_weight).t());
            {
                let (dg, db) = split_two(grads, lay, lt.ln2_gain, lt.ln2_bias);
                dx += &layer_norm_backward(&dh2, &lc.ln2, lay.vec(p, lt.ln2_gain), dg, db);
            }

            // x_mid = x_in + drop(out(attention(ln1(x_in))))
            let mut dattn = dx.clone();
            if let Some(m) = &lc.drop_attn {
                dattn *= m;
            }
            general_mat_mul(1.0, &lc.ctx.t(), &dattn, 1.0, &mut lay.mat_mut(grads, lt.out_weight));
            accumulate_bias(lay.slice_mut(grads, lt.out_bias), &dattn);
            let dctx = dattn.dot(&lay.mat(p, lt.out_weight).t());
            let mut dqkv = Array2::zeros((t_len, 3 * d));
            for h in 0..heads {
                let (qs, ks, vs) = (h * dh, d + h * dh, 2 * d + h * dh);
                let q = lc.qkv.slice(s![.., qs..qs + dh]);
                let k = lc.qkv.slice(s![.., ks..ks + dh]);
                let v = lc.qkv.slice(s![.., vs..vs + dh]);
                let probs = &lc.probs[h];
                let dctx_h = dctx.slice(s![.., h * dh..(h + 1) * dh]);
                let dprobs = dctx_h.dot(&v.t());
                dqkv.slice_mut(s![.., vs..vs + dh]).assign(&probs.t().dot(&dctx_h));
                let row_dot = (&dprobs * probs).sum_axis(Axis(1));
                let mut dscores = (dprobs - &row_dot.view().insert_axis(Axis(1))) * probs;
                dscores *= scale;
                dqkv.slice_mut(s![.., qs..qs + dh]).assign(&dscores.dot(&k));
                dqkv.slice_mut(s![.., ks..ks + dh]).assign(&dscores.t().dot(&q));
            }
            general_mat_mul(1.0, &lc.h1.t(), &dqkv, 1.0, &mut lay.mat_mut(grads, lt.qkv_weight));
            accumulate_bias(lay.slice_mut(grads, lt.qkv_bias), &dqkv);
            let dh1 = dqkv.dot(&lay.mat(p, lt.qkv_weight).t());
            {
                let (dg, db) = split_two(grads, lay, lt.ln1_gain, lt.ln1_bias);
                dx += &layer_norm_backward(&dh1, &lc.ln1, lay.vec(p, lt.ln1_gain), dg, db);
            }
        }
        if first_trainable_layer > 0 || cache.first_layer > 0 {
            return;
        }
        if let Some(m) = &cache.drop_embed {
            dx *= m;
        }
        {
            let mut dtok = lay.mat_mut(grads, lay.token_embedding);
            for (t, &id) in cache.ids.iter().enumerate() {
                let mut row = dtok.row_mut(id as usize);
                row += &dx.row(t);
            }
        }
        if let Some(pe) = lay.position_embedding {
            let mut dpos = lay.mat_mut(grads, pe);
            dpos.slice_mut(s![..t_len, ..]).scaled_add(1.0, &dx);
        }
    }

    /// Loss and gradient contribution of one sequence.
    ///
    /// Gradients are scaled by `1 / normalizer`, so a batch sums per-sequence
    /// calls with `normalizer` = total masked positions in the batch. Returns
    /// the summed negative log-likelihood over this sequence's positions.
    pub fn accumulate_mlm_grad(
        &self,
        ids: &[TokenId],
        plan: &MaskPlan,
        normalizer: f64,
        grads: &mut [f64],
        dropout: Option<&mut Rng>,
    ) -> Result<f64, EncoderError> {
        if plan.is_empty() {
            return Err(EncoderError::EmptyPlan);
        }
        plan.check(ids)?;
        let input = plan.apply(ids, MASK);
        let mask = Self::pad_mask(ids);
        let cache = self.trace(&input, &mask, dropout)?;
        let rows = cache.states.select(Axis(0), &plan.positions);
        let logits = self.logits_for(rows.view());
        let mut dlogits = Array2::zeros(logits.raw_dim());
        let mut nll = 0.0;
        for (i, &orig) in plan.originals.iter().enumerate() {
            let logp = log_softmax(logits.row(i));
            nll -= logp[orig as usize];
            let mut drow = dlogits.row_mut(i);
            drow.assign(&logp.mapv(f64::exp));
            drow[orig as usize] -= 1.0;
        }
        dlogits /= normalizer;
        let lay = &self.layout;
        general_mat_mul(1.0, &rows.t(), &dlogits, 1.0, &mut lay.mat_mut(grads, lay.head_weight));
        accumulate_bias(lay.slice_mut(grads, lay.head_bias), &dlogits);
        let drows = dlogits.dot(&lay.mat(&self.params, lay.head_weight).t());
        let mut d_states = Array2::zeros(cache.states.raw_dim());
        for (i, &pos) in plan.positions.iter().enumerate() {
            let mut row = d_states.row_mut(pos);
            row += &drows.row(i);
        }
        self.backward(&cache, &d_states, grads, 0);
        Ok(nll)
    }

    /// Mean negative log-likelihood of the original tokens at the plan's
    /// positions (inference mode).
    pub fn mlm_loss(&self, ids: &[TokenId], plan: &MaskPlan) -> Result<MlmLoss, EncoderError> {
        if plan.is_empty() {
            return Err(EncoderError::EmptyPlan);
        }
        plan.check(ids)?;
        let input = plan.apply(ids, MASK);
        let cache = self.trace(&input, &Self::pad_mask(ids), None)?;
        let rows = cache.states.select(Axis(0), &plan.positions);
        let logits = self.logits_for(rows.view());
        let mut token_logprobs = Vec::with_capacity(plan.len());
        let mut predictions = Vec::with_capacity(plan.len());
        for (i, &orig) in plan.originals.iter().enumerate() {
            let logp = log_softmax(logits.row(i));
            token_logprobs.push(logp[orig as usize]);
            predictions.push(argmax(logits.row(i)) as TokenId);
        }
        let loss = -token_logprobs.iter().sum::<f64>() / plan.len() as f64;
        Ok(MlmLoss {
            loss,
            token_logprobs,
            predictions,
        })
    }

    /// Positions that contribute to pooled embeddings.
    pub fn content_positions(ids: &[TokenId]) -> Vec<usize> {
        ids.iter()
            .enumerate()
            .filter(|(_, &id)| id != PAD && id != BOS && id != EOS)
            .map(|(i, _)| i)
            .collect()
    }

    /// Mean of final token states over content positions.
    pub fn embed_ids(&self, ids: &[TokenId]) -> Result<Array1<f64>, EncoderError> {
        let positions = Self::content_positions(ids);
        if positions.is_empty() {
            return Err(EncoderError::EmptyContent);
        }
        let cache = self.trace(ids, &Self::pad_mask(ids), None)?;
        Ok(cache
            .states
            .select(Axis(0), &positions)
            .mean_axis(Axis(0))
            .expect("non-empty"))
    }

    pub fn embed(&self, source_id: &str, ids: &[TokenId]) -> Result<Embedding, EncoderError> {
        Ok(Embedding {
            source_id: source_id.to_string(),
            vector: self.embed_ids(ids)?.to_vec(),
        })
    }
}

/// Two disjoint mutable gradient slices.
fn split_two<'a>(grads: &'a mut [f64], lay: &ParamLayout, a: usize, b: usize) -> (&'a mut [f64], &'a mut [f64]) {
    let ra = lay.specs[a].range();
    let rb = lay.specs[b].range();
    assert!(ra.end <= rb.start, "tensors must be ordered and disjoint");
    let (left, right) = grads.split_at_mut(rb.start);
    (&mut left[ra], &mut right[..rb.end - rb.start])
}
