use std::collections::BTreeSet;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::{EncoderConfig, EncoderError};
use crate::seed::Rng;
use crate::tokenizer::{is_special, TokenId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Replacement {
    Mask,
    Random(TokenId),
    Keep,
}

/// Which positions the MLM objective predicts, and what the model sees
/// there.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaskPlan {
    pub positions: Vec<usize>,
    pub replacements: Vec<Replacement>,
    pub originals: Vec<TokenId>,
}

impl MaskPlan {
    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    /// Plan that masks `positions` with the MASK token.
    pub fn mask_all(ids: &[TokenId], positions: Vec<usize>) -> Self {
        let originals = positions.iter().map(|&p| ids[p]).collect();
        let replacements = vec![Replacement::Mask; positions.len()];
        Self {
            positions,
            replacements,
            originals,
        }
    }

    /// The corrupted input sequence the model is fed.
    pub fn apply(&self, ids: &[TokenId], mask_id: TokenId) -> Vec<TokenId> {
        let mut out = ids.to_vec();
        for (&p, r) in self.positions.iter().zip(&self.replacements) {
            match *r {
                Replacement::Mask => out[p] = mask_id,
                Replacement::Random(id) => out[p] = id,
                Replacement::Keep => {}
            }
        }
        out
    }

    pub fn check(&self, ids: &[TokenId]) -> Result<(), EncoderError> {
        if self.positions.len() != self.replacements.len() || self.positions.len() != self.originals.len() {
            return Err(EncoderError::BadPlan("length mismatch".into()));
        }
        for (i, (&p, &o)) in self.positions.iter().zip(&self.originals).enumerate() {
            if p >= ids.len() {
                return Err(EncoderError::BadPlan(format!("position {p} out of bounds")));
            }
            if ids[p] != o {
                return Err(EncoderError::BadPlan(format!("original at {p} differs")));
            }
            if i > 0 && self.positions[i - 1] >= p {
                return Err(EncoderError::BadPlan("positions not strictly increasing".into()));
            }
        }
        Ok(())
    }
}

/// Select content positions for prediction, never delimiters or specials.
///
/// Each eligible position is drawn independently with `mask_rate`. An empty
/// draw is resampled once; if still empty the first eligible position is
/// forced. `random_pool` supplies RANDOM replacements and should itself
/// exclude delimiters and specials.
pub fn plan_masks(
    ids: &[TokenId],
    delimiter_ids: &BTreeSet<TokenId>,
    random_pool: &[TokenId],
    config: &EncoderConfig,
    rng: &mut Rng,
) -> Result<MaskPlan, EncoderError> {
    let eligible: Vec<usize> = ids
        .iter()
        .enumerate()
        .filter(|(_, id)| !is_special(**id) && !delimiter_ids.contains(id))
        .map(|(i, _)| i)
        .collect();
    if eligible.is_empty() {
        return Err(EncoderError::NoEligibleTokens);
    }
    let draw = |rng: &mut Rng| -> Vec<usize> {
        eligible
            .iter()
            .copied()
            .filter(|_| rng.random::<f64>() < config.mask_rate)
            .collect()
    };
    let mut positions = draw(rng);
    if positions.is_empty() {
        positions = draw(rng);
    }
    if positions.is_empty() {
        positions.push(eligible[0]);
    }
    let replacements = positions
        .iter()
        .map(|_| {
            let u: f64 = rng.random();
            if u < config.mask_token_fraction {
                Replacement::Mask
            } else if u < config.mask_token_fraction + config.random_fraction {
                match random_pool.len() {
                    0 => Replacement::Mask,
                    n => Replacement::Random(random_pool[rng.random_range(0..n)]),
                }
            } else {
                Replacement::Keep
            }
        })
        .collect();
    let originals = positions.iter().map(|&p| ids[p]).collect();
    Ok(MaskPlan {
        positions,
        replacements,
        originals,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed;
    use crate::tokenizer::{BOS, EOS, MASK, PAD};

    fn config(rate: f64) -> EncoderConfig {
        EncoderConfig {
            mask_rate: rate,
            ..Default::default()
        }
    }

    #[test]
    fn only_delimiters_is_an_error() {
        let delims: BTreeSet<TokenId> = [b'{', b'"', b':', b'}'].iter().map(|&b| TokenId::from(b)).collect();
        let ids = [BOS, 123, 34, 58, 34, 125, EOS];
        let r = plan_masks(&ids, &delims, &[], &config(0.15), &mut seed::rng(0));
        assert!(matches!(r, Err(EncoderError::NoEligibleTokens)));
    }

    #[test]
    fn tiny_rate_forces_the_single_eligible_token() {
        let delims: BTreeSet<TokenId> = [34].into_iter().collect();
        let ids = [BOS, 34, 97, 34, EOS, PAD];
        let plan = plan_masks(&ids, &delims, &[97], &config(1e-9), &mut seed::rng(0)).unwrap();
        assert_eq!(plan.positions, vec![2]);
        assert_eq!(plan.originals, vec![97]);
    }

    #[test]
    fn monte_carlo_rate_and_exclusion() {
        // Alternate content and delimiter tokens: 50% delimiters.
        let delims: BTreeSet<TokenId> = [34, 58].into_iter().collect();
        let mut ids = vec![BOS];
        for i in 0..100 {
            ids.push(if i % 2 == 0 { 97 + i % 23 } else { 34 });
        }
        ids.push(EOS);
        let eligible = 50usize;
        let cfg = config(0.15);
        let pool: Vec<TokenId> = (97..120).collect();
        let mut rng = seed::rng(42);
        let trials = 10_000;
        let mut selected = 0usize;
        for _ in 0..trials {
            let plan = plan_masks(&ids, &delims, &pool, &cfg, &mut rng).unwrap();
            plan.check(&ids).unwrap();
            for &p in &plan.positions {
                assert!(!delims.contains(&ids[p]) && !is_special(ids[p]));
            }
            selected += plan.len();
            let corrupted = plan.apply(&ids, MASK);
            for (&p, r) in plan.positions.iter().zip(&plan.replacements) {
                if let Replacement::Random(id) = r {
                    assert!(!delims.contains(id));
                    assert_eq!(corrupted[p], *id);
                }
            }
        }
        let rate = selected as f64 / (trials * eligible) as f64;
        // Binomial 99.9% half-width at n = 500k is ~0.0017; resampling adds
        // about 0.85^50 * 0.15.
        assert!((rate - 0.15).abs() < 0.01, "rate {rate}");
    }
}
