use ndarray::{ArrayView1, ArrayView2, ArrayViewMut1, ArrayViewMut2};
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{round_f32, EncoderConfig};
use crate::seed::Rng;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
}

impl TensorSpec {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

/// Tensor indices of one transformer block.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerTensors {
    pub ln1_gain: usize,
    pub ln1_bias: usize,
    pub qkv_weight: usize,
    pub qkv_bias: usize,
    pub out_weight: usize,
    pub out_bias: usize,
    pub ln2_gain: usize,
    pub ln2_bias: usize,
    pub ffn_in_weight: usize,
    pub ffn_in_bias: usize,
    pub ffn_out_weight: usize,
    pub ffn_out_bias: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamLayout {
    pub specs: Vec<TensorSpec>,
    pub total: usize,
    pub token_embedding: usize,
    pub position_embedding: Option<usize>,
    pub layers: Vec<LayerTensors>,
    pub final_gain: usize,
    pub final_bias: usize,
    pub head_weight: usize,
    pub head_bias: usize,
}

struct Builder {
    specs: Vec<TensorSpec>,
    total: usize,
}

impl Builder {
    fn add(&mut self, name: String, shape: &[usize]) -> usize {
        let spec = TensorSpec {
            name,
            shape: shape.to_vec(),
            offset: self.total,
        };
        self.total += spec.len();
        self.specs.push(spec);
        self.specs.len() - 1
    }
}

impl ParamLayout {
    pub fn new(config: &EncoderConfig) -> Self {
        let (v, d, f) = (config.vocab_size, config.hidden_dim, config.ffn_dim);
        let mut b = Builder {
            specs: Vec::new(),
            total: 0,
        };
        let token_embedding = b.add("embeddings.token".into(), &[v, d]);
        let position_embedding = config
            .positional
            .then(|| b.add("embeddings.position".into(), &[config.max_seq_len, d]));
        let layers = (0..config.num_layers)
            .map(|l| {
                let mut add = |suffix: &str, shape: &[usize]| b.add(format!("layers.{l}.{suffix}"), shape);
                LayerTensors {
                    ln1_gain: add("ln1.gain", &[d]),
                    ln1_bias: add("ln1.bias", &[d]),
                    qkv_weight: add("attn.qkv.weight", &[d, 3 * d]),
                    qkv_bias: add("attn.qkv.bias", &[3 * d]),
                    out_weight: add("attn.out.weight", &[d, d]),
                    out_bias: add("attn.out.bias", &[d]),
                    ln2_gain: add("ln2.gain", &[d]),
                    ln2_bias: add("ln2.bias", &[d]),
                    ffn_in_weight: add("ffn.in.weight", &[d, f]),
                    ffn_in_bias: add("ffn.in.bias", &[f]),
                    ffn_out_weight: add("ffn.out.weight", &[f, d]),
                    ffn_out_bias: add("ffn.out.bias", &[d]),
                }
            })
            .collect();
        let final_gain = b.add("final_ln.gain".into(), &[d]);
        let final_bias = b.add("final_ln.bias".into(), &[d]);
        let head_weight = b.add("mlm_head.weight".into(), &[d, v]);
        let head_bias = b.add("mlm_head.bias".into(), &[v]);
        Self {
            specs: b.specs,
            total: b.total,
            token_embedding,
            position_embedding,
            layers,
            final_gain,
            final_bias,
            head_weight,
            head_bias,
        }
    }

    pub fn find(&self, name: &str) -> Option<usize> {
        self.specs.iter().position(|s| s.name == name)
    }

    pub fn slice<'a>(&self, data: &'a [f64], t: usize) -> &'a [f64] {
        &data[self.specs[t].range()]
    }

    pub fn slice_mut<'a>(&self, data: &'a mut [f64], t: usize) -> &'a mut [f64] {
        &mut data[self.specs[t].range()]
    }

    pub fn vec<'a>(&self, data: &'a [f64], t: usize) -> ArrayView1<'a, f64> {
        ArrayView1::from(self.slice(data, t))
    }

    pub fn vec_mut<'a>(&self, data: &'a mut [f64], t: usize) -> ArrayViewMut1<'a, f64> {
        ArrayViewMut1::from(self.slice_mut(data, t))
    }

    pub fn mat<'a>(&self, data: &'a [f64], t: usize) -> ArrayView2<'a, f64> {
        let shape = &self.specs[t].shape;
        ArrayView2::from_shape((shape[0], shape[1]), self.slice(data, t)).expect("matrix shape")
    }

    pub fn mat_mut<'a>(&self, data: &'a mut [f64], t: usize) -> ArrayViewMut2<'a, f64> {
        let shape = self.specs[t].shape.clone();
        ArrayViewMut2::from_shape((shape[0], shape[1]), self.slice_mut(data, t)).expect("matrix shape")
    }

    /// Tensor indices belonging to transformer block `layer`.
    pub fn layer_tensor_ids(&self, layer: usize) -> Vec<usize> {
        let prefix = format!("layers.{layer}.");
        (0..self.specs.len())
            .filter(|&t| self.specs[t].name.starts_with(&prefix))
            .collect()
    }

    fn is_norm_gain(&self, t: usize) -> bool {
        self.specs[t].name.ends_with(".gain")
    }

    fn is_bias(&self, t: usize) -> bool {
        self.specs[t].name.ends_with(".bias")
    }

    /// Weights from a normal(0, 0.02) truncated at two standard deviations;
    /// norm gains 1, biases 0. Values are rounded to `f32`.
    pub fn init(&self, rng: &mut Rng) -> Vec<f64> {
        let normal = Normal::new(0.0, 0.02).expect("valid normal");
        let mut data = vec![0.0; self.total];
        for (t, spec) in self.specs.iter().enumerate() {
            let dst = &mut data[spec.range()];
            if self.is_norm_gain(t) {
                dst.fill(1.0);
            } else if self.is_bias(t) {
                dst.fill(0.0);
            } else {
                for x in dst.iter_mut() {
                    *x = loop {
                        let v: f64 = normal.sample(rng);
                        if v.abs() <= 0.04 {
                            break round_f32(v);
                        }
                    };
                }
            }
        }
        data
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_counted_parameters() {
        let config = EncoderConfig {
            vocab_size: 64,
            hidden_dim: 8,
            num_layers: 2,
            num_heads: 2,
            ffn_dim: 16,
            max_seq_len: 16,
            ..Default::default()
        };
        // token 64*8, position 16*8
        let embeddings = 64 * 8 + 16 * 8;
        // ln1 2*8, qkv 8*24+24, out 8*8+8, ln2 2*8, ffn_in 8*16+16, ffn_out 16*8+8
        let per_layer = 16 + (192 + 24) + (64 + 8) + 16 + (128 + 16) + (128 + 8);
        assert_eq!(per_layer, 600);
        // final norm 2*8, head 8*64+64
        let head = 16 + 8 * 64 + 64;
        let layout = ParamLayout::new(&config);
        assert_eq!(layout.total, embeddings + 2 * per_layer + head);
        assert_eq!(layout.total, 2432);
        assert_eq!(layout.specs[layout.layers[1].qkv_weight].shape, vec![8, 24]);
        assert_eq!(config.head_dim(), 4);
    }

    #[test]
    fn init_is_seeded() {
        let config = EncoderConfig {
            vocab_size: 300,
            hidden_dim: 8,
            num_layers: 1,
            num_heads: 2,
            ffn_dim: 16,
            max_seq_len: 8,
            ..Default::default()
        };
        let layout = ParamLayout::new(&config);
        let a = layout.init(&mut crate::seed::rng(1));
        let b = layout.init(&mut crate::seed::rng(1));
        let c = layout.init(&mut crate::seed::rng(2));
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert!(a.iter().all(|x| x.abs() <= 1.0 && *x == round_f32(*x)));
        assert!(layout.slice(&a, layout.final_gain).iter().all(|&g| g == 1.0));
        assert!(layout.slice(&a, layout.head_bias).iter().all(|&g| g == 0.0));
    }
}
