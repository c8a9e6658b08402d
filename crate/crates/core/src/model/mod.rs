//! Cascaded magnitude / complex temporal convolutional network (MC-TCN).
//!
//! Both cores share one shape: input projections to `d_model`, a trunk of
//! width `2 * d_model` running through `num_blocks` bottleneck residual
//! blocks, and fully connected heads. Each block is
//!
//! ```text
//! x ─┬─ [PReLU → LN → conv 1x1 → d_f] → [PReLU → LN → conv k, dilation d_b] → [PReLU → LN → conv 1x1 → 2·d_model] ─(+)─►
//!    └─────────────────────────────────────────────────────────────────────────────────────────────────────────────┘
//! ```
//!
//! Evaluation is strictly frame-by-frame; [`CoreState`] carries the causal
//! history of every dilated convolution.

mod cores;
pub mod layers;
mod weights;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

pub use cores::{ComplexCore, CoreState, MagnitudeCore};
pub use weights::{expected_shapes, ModelWeights, Tensor, WeightError, FORMAT_VERSION, MAGIC};

use crate::error::{Error, Result};

/// Floor inside the log-magnitude features.
pub const LOG_FLOOR: f64 = 1e-7;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub d_model: usize,
    pub d_f: usize,
    pub kernel: usize,
    pub num_blocks: usize,
    pub max_dilation: usize,
    pub bins: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            d_model: 256,
            d_f: 64,
            kernel: 3,
            num_blocks: 20,
            max_dilation: 16,
            bins: 257,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d_model == 0 || self.d_f == 0 || self.kernel == 0 || self.bins == 0 {
            return Err(Error::Config(
                "model widths and kernel must be positive".into(),
            ));
        }
        if !self.max_dilation.is_power_of_two() {
            return Err(Error::Config(format!(
                "max dilation {} is not a power of two",
                self.max_dilation
            )));
        }
        Ok(())
    }

    /// Dilations of blocks `1..=num_blocks`.
    pub fn dilations(&self) -> Result<Vec<usize>> {
        (1..=self.num_blocks)
            .map(|b| dilation_rate(b, self.max_dilation))
            .collect()
    }

    /// Look-back of one core in frames: `sum_b (kernel - 1) * d_b`.
    pub fn receptive_field(&self) -> Result<usize> {
        Ok(self
            .dilations()?
            .iter()
            .map(|d| (self.kernel - 1) * d)
            .sum())
    }
}

/// Dilation of block `b` (1-based): `2^((b - 1) mod (log2(max_dilation) + 1))`,
/// i.e. 1, 2, 4, ..., max_dilation, 1, 2, ...
pub fn dilation_rate(b: usize, max_dilation: usize) -> Result<usize> {
    if b == 0 {
        return Err(Error::Config("block index starts at 1".into()));
    }
    if !max_dilation.is_power_of_two() {
        return Err(Error::Config(format!(
            "max dilation {max_dilation} is not a power of two"
        )));
    }
    let cycle = max_dilation.trailing_zeros() as usize + 1;
    Ok(1 << ((b - 1) % cycle))
}

/// Trainable parameters implied by `cfg`.
pub fn param_count(cfg: &ModelConfig) -> Result<usize> {
    cfg.validate()?;
    let (d, f, k, bins, nb) = (cfg.d_model, cfg.d_f, cfg.kernel, cfg.bins, cfg.num_blocks);
    let trunk = 2 * d;
    // Real unit: PReLU + LN over the input, convolution weight and bias.
    let real_unit = |i: usize, o: usize, k: usize| 3 * i + o * i * k + o;
    // Complex unit: shared PReLU, two LNs, two weights, two biases.
    let cplx_unit = |i: usize, o: usize, k: usize| 5 * i + 2 * o * i * k + 2 * o;

    let mag = 2 * (d * bins + 4 * d)
        + nb * (real_unit(trunk, f, 1) + real_unit(f, f, k) + real_unit(f, trunk, 1))
        + bins * trunk
        + bins;
    let cplx = 2 * (2 * d * bins + 7 * d)
        + nb * (cplx_unit(trunk, f, 1) + cplx_unit(f, f, k) + cplx_unit(f, trunk, 1))
        + 2 * (bins * 2 * trunk + bins);
    Ok(mag + cplx)
}

/// Masks produced for one frame.
#[derive(Clone, Debug, PartialEq)]
pub struct MaskPair {
    pub mag_mask: Vec<f64>,
    pub real_mask: Vec<f64>,
    pub imag_mask: Vec<f64>,
}

/// `log(|X| + 1e-7)` per bin.
pub fn log_magnitude(spec: &[Complex64]) -> Vec<f64> {
    spec.iter().map(|c| (c.norm() + LOG_FLOOR).ln()).collect()
}

/// Combines the first-core magnitude with the complex ratio mask:
/// `S = mag * tanh(|M|) * exp(j (phase + angle(M)))`.
pub fn post_process(
    mag: &[f64],
    phase: &[f64],
    real_mask: &[f64],
    imag_mask: &[f64],
) -> Vec<Complex64> {
    mag.iter()
        .zip(phase)
        .zip(real_mask.iter().zip(imag_mask))
        .map(|((&m, &p), (&mr, &mi))| {
            let gain = mr.hypot(mi).tanh();
            let angle = if mr == 0.0 && mi == 0.0 {
                0.0
            } else {
                mi.atan2(mr)
            };
            Complex64::from_polar(m * gain, p + angle)
        })
        .collect()
}

/// Both cores with their weights; immutable and shareable across sessions.
#[derive(Clone, Debug)]
pub struct Mctcn {
    cfg: ModelConfig,
    magnitude: MagnitudeCore,
    complex: ComplexCore,
}

/// Per-session state of both cores.
#[derive(Clone, Debug, PartialEq)]
pub struct MctcnState {
    pub magnitude: CoreState,
    pub complex: CoreState,
}

impl Mctcn {
    pub fn new(weights: &ModelWeights, cfg: ModelConfig) -> Result<Self> {
        weights.validate(&cfg)?;
        Ok(Self {
            magnitude: MagnitudeCore::from_weights(weights, &cfg)?,
            complex: ComplexCore::from_weights(weights, &cfg)?,
            cfg,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    pub fn magnitude_core(&self) -> &MagnitudeCore {
        &self.magnitude
    }

    pub fn complex_core(&self) -> &ComplexCore {
        &self.complex
    }

    pub fn new_state(&self) -> MctcnState {
        MctcnState {
            magnitude: self.magnitude.new_state(),
            complex: self.complex.new_state(),
        }
    }

    /// Enhances one frame given the error and echo-estimate spectra.
    pub fn process_frame(
        &self,
        state: &mut MctcnState,
        error_spec: &[Complex64],
        echo_spec: &[Complex64],
    ) -> Result<(Vec<Complex64>, MaskPair)> {
        let mag_mask = self.magnitude.forward(
            &mut state.magnitude,
            &log_magnitude(error_spec),
            &log_magnitude(echo_spec),
        )?;
        let masked: Vec<Complex64> = error_spec
            .iter()
            .zip(&mag_mask)
            .map(|(e, m)| e * m)
            .collect();
        let (real_mask, imag_mask) =
            self.complex
                .forward(&mut state.complex, &masked, echo_spec)?;
        let mag: Vec<f64> = masked.iter().map(|c| c.norm()).collect();
        let phase: Vec<f64> = error_spec.iter().map(|c| c.arg()).collect();
        let out = post_process(&mag, &phase, &real_mask, &imag_mask);
        Ok((
            out,
            MaskPair {
                mag_mask,
                real_mask,
                imag_mask,
            },
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dilation_table() {
        let table: Vec<usize> = (1..=20).map(|b| dilation_rate(b, 16).unwrap()).collect();
        assert_eq!(table, [1, 2, 4, 8, 16].repeat(4));
        assert_eq!(dilation_rate(1, 1).unwrap(), 1);
        assert_eq!(dilation_rate(2, 1).unwrap(), 1);
        assert!(dilation_rate(1, 12).is_err());
        assert!(dilation_rate(0, 16).is_err());
    }

    #[test]
    fn param_count_matches_tensor_inventory() {
        for cfg in [
            ModelConfig::default(),
            ModelConfig {
                num_blocks: 0,
                ..Default::default()
            },
            ModelConfig {
                d_model: 16,
                d_f: 8,
                kernel: 5,
                num_blocks: 3,
                max_dilation: 4,
                bins: 257,
            },
        ] {
            let listed: usize = expected_shapes(&cfg)
                .unwrap()
                .iter()
                .map(|(_, s)| s.iter().product::<usize>())
                .sum();
            assert_eq!(param_count(&cfg).unwrap(), listed);
        }
    }

    #[test]
    fn param_count_without_blocks_is_projection_and_heads_only() {
        let cfg = ModelConfig {
            num_blocks: 0,
            ..Default::default()
        };
        // mag: two FC (256x257 + 256 bias + LN 512 + PReLU 256), head 257x512 + 257.
        let mag = 2 * (256 * 257 + 256 + 512 + 256) + 257 * 512 + 257;
        // cplx: two complex FC (2 weights, 2 biases, 2 LNs, PReLU), two heads 257x1024 + 257.
        let cplx = 2 * (2 * 256 * 257 + 2 * 256 + 4 * 256 + 256) + 2 * (257 * 1024 + 257);
        assert_eq!(param_count(&cfg).unwrap(), mag + cplx);
    }

    #[test]
    fn doubling_bottleneck_width_adds_predicted_parameters() {
        let base = ModelConfig {
            kernel: 1,
            ..Default::default()
        };
        let wide = ModelConfig {
            d_f: 128,
            ..base.clone()
        };
        let (f, t, b) = (64usize, 512usize, 20usize);
        // Closed-form counts of the three units of one block in each core.
        let real = |f: usize| (3 * t + f * t + f) + (3 * f + f * f + f) + (3 * f + t * f + t);
        let cplx = |f: usize| {
            (5 * t + 2 * f * t + 2 * f) + (5 * f + 2 * f * f + 2 * f) + (5 * f + 2 * t * f + 2 * t)
        };
        let delta = b * (real(2 * f) - real(f) + cplx(2 * f) - cplx(f));
        assert_eq!(
            param_count(&wide).unwrap() - param_count(&base).unwrap(),
            delta
        );
    }

    #[test]
    fn paper_config_size() {
        let n = param_count(&ModelConfig::default()).unwrap();
        assert!((4_100_000..=6_900_000).contains(&n), "{n}");
        assert_eq!(ModelConfig::default().receptive_field().unwrap(), 248);
    }

    #[test]
    fn post_process_examples() {
        let out = post_process(&[2.0], &[0.3], &[1.0], &[0.0]);
        assert!((out[0].norm() - 2.0 * 1f64.tanh()).abs() < 1e-12);
        assert!((out[0].arg() - 0.3).abs() < 1e-12);
        assert_eq!(
            post_process(&[5.0], &[1.0], &[0.0], &[0.0])[0],
            Complex64::new(0.0, 0.0)
        );
        let rotated = post_process(&[1.0], &[0.0], &[0.0], &[3.0]);
        assert!((rotated[0].arg() - std::f64::consts::FRAC_PI_2).abs() < 1e-12);
    }

    #[test]
    fn config_rejects_bad_dilation() {
        let cfg = ModelConfig {
            max_dilation: 6,
            ..Default::default()
        };
        assert!(cfg.validate().is_err());
        assert!(param_count(&cfg).is_err());
    }
}
