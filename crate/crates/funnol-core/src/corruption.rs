//! Stochastic corruption layer applied to training inputs.
//!
//! Corruption first discards each observed cell independently with
//! probability `miss_prob`, then adds i.i.d. Gaussian noise with standard
//! deviation `noise_sd` to the surviving cells. The same rule runs
//! independently on every channel. Draws are keyed per
//! (seed, draw_index, sample_index, cell), so a corrupted batch is
//! reproducible and independent of evaluation order; training refreshes
//! the draw every epoch by passing the epoch as `draw_index`.
//!
//! Reconstruction targets are always the uncorrupted values under the
//! original mask; corruption only changes what the encoder sees.

use serde::{Deserialize, Serialize};

use crate::dataset::FunctionalSample;
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::rng::{mix_key, stream, SplitMix64};

/// Parameters of the corruption layer.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorruptionConfig {
    /// Probability that an observed cell is discarded, in [0, 1).
    pub miss_prob: f64,
    /// Standard deviation of the additive Gaussian noise, >= 0.
    pub noise_sd: f64,
    pub seed: u64,
}

impl CorruptionConfig {
    pub fn new(miss_prob: f64, noise_sd: f64, seed: u64) -> Result<Self> {
        if !(0.0..1.0).contains(&miss_prob) {
            return Err(Error::InvalidConfig(format!(
                "miss_prob must be in [0,1), got {miss_prob}"
            )));
        }
        if !noise_sd.is_finite() || noise_sd < 0.0 {
            return Err(Error::InvalidConfig(format!(
                "noise_sd must be finite and >= 0, got {noise_sd}"
            )));
        }
        Ok(CorruptionConfig {
            miss_prob,
            noise_sd,
            seed,
        })
    }
}

impl Default for CorruptionConfig {
    /// Defaults are in post-standardization units.
    fn default() -> Self {
        CorruptionConfig {
            miss_prob: 0.1,
            noise_sd: 0.1,
            seed: 0,
        }
    }
}

/// Produces the corrupted copy of one sample for a given draw.
///
/// Already-missing cells stay missing, the label is untouched, and the
/// result is a pure function of (config, draw_index, sample_index, cell).
pub fn corrupt(
    sample: &FunctionalSample,
    cfg: &CorruptionConfig,
    draw_index: u64,
    sample_index: usize,
) -> FunctionalSample {
    let j = sample.grid_len();
    let d = sample.channels();
    let mut values = Matrix::zeros(j, d);
    let mut mask = vec![false; j * d];
    for t in 0..j {
        for ch in 0..d {
            if !sample.observed(t, ch) {
                continue;
            }
            let cell = (t * d + ch) as u64;
            let mut rng = SplitMix64::new(mix_key(&[
                cfg.seed,
                stream::CORRUPT,
                draw_index,
                sample_index as u64,
                cell,
            ]));
            if rng.next_f64() < cfg.miss_prob {
                continue; // discarded: mask stays false, value stays 0
            }
            let noise = if cfg.noise_sd > 0.0 {
                cfg.noise_sd * rng.next_gaussian()
            } else {
                0.0
            };
            values.set(t, ch, sample.value(t, ch) + noise);
            mask[t * d + ch] = true;
        }
    }
    FunctionalSample::with_parts(values, mask, sample.label())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ramp_sample(j: usize, d: usize) -> FunctionalSample {
        let data: Vec<f64> = (0..j * d).map(|i| i as f64 * 0.01).collect();
        FunctionalSample::fully_observed(Matrix::from_vec(j, d, data).unwrap(), Some(0))
    }

    #[test]
    fn identity_when_disabled() {
        let s = ramp_sample(50, 2);
        let cfg = CorruptionConfig::new(0.0, 0.0, 9).unwrap();
        let out = corrupt(&s, &cfg, 0, 0);
        assert_eq!(out, s);
    }

    #[test]
    fn extreme_miss_prob_masks_nearly_everything() {
        let s = ramp_sample(1000, 1);
        let cfg = CorruptionConfig::new(0.999, 0.0, 4).unwrap();
        let out = corrupt(&s, &cfg, 0, 0);
        assert!(out.observed_count() < 20);
    }

    #[test]
    fn miss_prob_one_rejected() {
        assert!(CorruptionConfig::new(1.0, 0.0, 0).is_err());
    }

    // Binomial oracle: with p = 0.3 and n = 10^4 the surviving fraction
    // lies in [0.685, 0.715] with probability ~99.9%.
    #[test]
    fn observed_fraction_within_binomial_interval() {
        let s = ramp_sample(10_000, 1);
        let cfg = CorruptionConfig::new(0.3, 0.0, 2024).unwrap();
        let out = corrupt(&s, &cfg, 0, 0);
        let fraction = out.observed_count() as f64 / 10_000.0;
        assert!((0.685..=0.715).contains(&fraction), "fraction {fraction}");
    }

    #[test]
    fn surviving_values_exact_when_noise_free() {
        let s = ramp_sample(200, 3);
        let cfg = CorruptionConfig::new(0.4, 0.0, 5).unwrap();
        let out = corrupt(&s, &cfg, 1, 7);
        for j in 0..s.grid_len() {
            for d in 0..s.channels() {
                if out.observed(j, d) {
                    assert_eq!(out.value(j, d), s.value(j, d));
                }
            }
        }
    }

    #[test]
    fn noise_mean_within_clt_bound() {
        let s = ramp_sample(100_000, 1);
        let sd = 0.5;
        let cfg = CorruptionConfig::new(0.0, sd, 31).unwrap();
        let out = corrupt(&s, &cfg, 0, 0);
        let n = s.grid_len() as f64;
        let mean_noise: f64 = (0..s.grid_len())
            .map(|j| out.value(j, 0) - s.value(j, 0))
            .sum::<f64>()
            / n;
        assert!(mean_noise.abs() < 4.0 * sd / n.sqrt(), "mean {mean_noise}");
    }

    #[test]
    fn identical_keys_give_bit_identical_output() {
        let s = ramp_sample(64, 2);
        let cfg = CorruptionConfig::new(0.25, 0.3, 77).unwrap();
        let a = corrupt(&s, &cfg, 3, 11);
        let b = corrupt(&s, &cfg, 3, 11);
        assert_eq!(a, b);
        let c = corrupt(&s, &cfg, 4, 11);
        assert_ne!(a, c);
    }

    #[test]
    fn already_missing_cells_stay_missing() {
        let values = Matrix::from_rows(&[&[1.0], &[2.0], &[3.0]]);
        let s = FunctionalSample::new(values, vec![true, false, true], Some(1)).unwrap();
        let cfg = CorruptionConfig::new(0.0, 1.0, 8).unwrap();
        let out = corrupt(&s, &cfg, 0, 0);
        assert!(!out.observed(1, 0));
        assert_eq!(out.value(1, 0), 0.0);
        assert_eq!(out.label(), Some(1));
    }

    proptest! {
        // Output mask is a subset of the input mask, labels preserved.
        #[test]
        fn mask_never_grows(p in 0.0f64..0.9, seed in 0u64..30, draw in 0u64..4) {
            let values = Matrix::from_vec(10, 2, (0..20).map(|i| i as f64).collect()).unwrap();
            let mask: Vec<bool> = (0..20).map(|i| i % 3 != 0).collect();
            let s = FunctionalSample::new(values, mask, Some(0)).unwrap();
            let cfg = CorruptionConfig::new(p, 0.2, seed).unwrap();
            let out = corrupt(&s, &cfg, draw, 5);
            for j in 0..10 {
                for d in 0..2 {
                    prop_assert!(!out.observed(j, d) || s.observed(j, d));
                }
            }
            prop_assert_eq!(out.label(), s.label());
        }
    }
}
