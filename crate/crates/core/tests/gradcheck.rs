//! Analytic MLM gradients against central finite differences.
//!
//! Every parameter of a D=8, L=2 encoder is perturbed; the worst relative
//! error per tensor must stay below 1e-4.

use logenc_core::encoder::{EncoderConfig, EncoderModel, MaskPlan, Replacement};
use logenc_core::seed;
use logenc_core::tokenizer::{BOS, EOS, PAD};
use rand::Rng;

fn tiny_model(seed_value: u64, positional: bool) -> EncoderModel {
    let config = EncoderConfig {
        vocab_size: 270,
        hidden_dim: 8,
        num_layers: 2,
        num_heads: 2,
        ffn_dim: 16,
        max_seq_len: 8,
        dropout_rate: 0.0,
        positional,
        ..Default::default()
    };
    let mut model = EncoderModel::new(config, seed_value).unwrap();
    // Larger weights than the 0.02 init give every nonlinearity real curvature.
    let mut rng = seed::rng(seed_value ^ 0xfeed);
    for p in &mut model.params {
        *p += rng.random_range(-0.4..0.4);
    }
    model
}

/// Largest elementwise relative error per tensor.
fn check(model: &EncoderModel, ids: &[u32], plan: &MaskPlan) -> Vec<(String, f64)> {
    let mut grads = vec![0.0; model.layout.total];
    model
        .accumulate_mlm_grad(ids, plan, plan.len() as f64, &mut grads, None)
        .unwrap();
    // Fourth-order central stencil: truncation O(h^4), rounding O(eps / h).
    let h = 1e-3;
    let mut probe = model.clone();
    let mut report = Vec::new();
    for spec in &model.layout.specs {
        let mut worst: f64 = 0.0;
        for i in spec.range() {
            let orig = probe.params[i];
            let mut at = |offset: f64| {
                probe.params[i] = orig + offset;
                probe.mlm_loss(ids, plan).unwrap().loss
            };
            let numeric = (at(-2.0 * h) - 8.0 * at(-h) + 8.0 * at(h) - at(2.0 * h)) / (12.0 * h);
            probe.params[i] = orig;
            let analytic = grads[i];
            let scale = analytic.abs().max(numeric.abs());
            if scale > 1e-7 {
                let rel = (analytic - numeric).abs() / scale;
                worst = worst.max(rel);
            }
        }
        report.push((spec.name.clone(), worst));
    }
    report
}

#[test]
fn mlm_gradients_match_finite_differences() {
    let model = tiny_model(1, true);
    let ids = [BOS, 97, 120, 265, 101, EOS];
    let plan = MaskPlan {
        positions: vec![1, 3, 4],
        replacements: vec![Replacement::Mask, Replacement::Random(99), Replacement::Keep],
        originals: vec![97, 265, 101],
    };
    let report = check(&model, &ids, &plan);
    for (name, err) in &report {
        assert!(*err < 1e-4, "{name}: relative error {err:e}");
    }
    let worst = report.iter().map(|(_, e)| *e).fold(0.0, f64::max);
    println!("worst relative error {worst:e}");
    assert!(report.len() > 20);
}

#[test]
fn gradients_with_padding_and_no_positions() {
    let model = tiny_model(2, false);
    let ids = [BOS, 110, 111, EOS, PAD, PAD];
    let plan = MaskPlan::mask_all(&ids, vec![1, 2]);
    for (name, err) in check(&model, &ids, &plan) {
        assert!(err < 1e-4, "{name}: relative error {err:e}");
    }
}
