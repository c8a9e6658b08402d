//! Per-hop orchestration of the enhancement chain and the evaluation report.

mod report;

use std::path::PathBuf;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

pub use report::{
    classify_segments, run_metrics, MetricReport, Segment, SegmentMetrics, SignalStats, Truth,
    SEGMENT_FRAME,
};

use crate::delay::{compensation_lag, DelayConfig, DelayEstimate, DelayEstimator, DelayLine};
use crate::error::{Error, Result};
use crate::mdf::{MdfConfig, MdfFilter};
use crate::model::{MaskPair, Mctcn, MctcnState, ModelConfig, ModelWeights};
use crate::signal::{OverlapAdd, SpectralFrame, StftConfig, StreamingStft, Waveform};

/// Stages to skip. Any combination is valid as long as one stage still runs.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Bypass {
    pub delay: bool,
    pub filter: bool,
    pub network: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StftSettings {
    pub fft_size: usize,
}

impl Default for StftSettings {
    fn default() -> Self {
        Self { fft_size: 512 }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SessionConfig {
    /// Weight file; without one the network stage is skipped.
    pub weights: Option<PathBuf>,
    pub model: ModelConfig,
    pub delay: DelayConfig,
    pub mdf: MdfConfig,
    pub stft: StftSettings,
    pub bypass: Bypass,
    /// Default location of the enhanced output.
    pub output: Option<PathBuf>,
}

impl SessionConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("session config serializes")
    }

    /// The network runs when it is not bypassed and a weight file is named.
    pub fn network_enabled(&self) -> bool {
        !self.bypass.network && self.weights.is_some()
    }

    pub fn validate(&self) -> Result<()> {
        check_stages(&self.bypass, self.network_enabled())?;
        self.validate_settings()
    }

    fn validate_settings(&self) -> Result<()> {
        if self.stft.fft_size != self.mdf.fft_size() {
            return Err(Error::Config(format!(
                "transform size {} must be twice the filter block ({})",
                self.stft.fft_size, self.mdf.block_len
            )));
        }
        self.mdf.validate()?;
        self.delay.validate()?;
        if !self.bypass.network {
            self.model.validate()?;
            if self.model.bins != self.stft.fft_size / 2 + 1 {
                return Err(Error::Config(format!(
                    "model expects {} bins, the transform yields {}",
                    self.model.bins,
                    self.stft.fft_size / 2 + 1
                )));
            }
        }
        Ok(())
    }

    /// Loads and validates the weight file named by the config, when the
    /// network stage is enabled.
    pub fn load_model(&self) -> Result<Option<Arc<Mctcn>>> {
        let (false, Some(path)) = (self.bypass.network, self.weights.as_ref()) else {
            return Ok(None);
        };
        let weights = ModelWeights::load(path, &self.model)?;
        Ok(Some(Arc::new(Mctcn::new(&weights, self.model.clone())?)))
    }
}

fn check_stages(bypass: &Bypass, network: bool) -> Result<()> {
    if bypass.delay && bypass.filter && !network {
        return Err(Error::Config("every processing stage is bypassed".into()));
    }
    Ok(())
}

struct NetworkStage {
    model: Arc<Mctcn>,
    state: MctcnState,
    error_stft: StreamingStft,
    echo_stft: StreamingStft,
    synthesis: OverlapAdd,
}

/// Everything one hop produced.
#[derive(Clone, Debug)]
pub struct HopOutput {
    /// Enhanced samples. With the network enabled they lag the input by one
    /// hop.
    pub samples: Vec<f64>,
    pub error: Vec<f64>,
    pub echo: Vec<f64>,
    pub delay: Option<DelayEstimate>,
    pub masks: Option<MaskPair>,
}

/// One enhancement stream. Not shareable; weights inside are.
pub struct Session {
    cfg: SessionConfig,
    hop: usize,
    estimator: Option<DelayEstimator>,
    line: DelayLine,
    filter: Option<MdfFilter>,
    applied_lag: usize,
    network: Option<NetworkStage>,
}

impl Session {
    /// Starts a stream. The network runs iff `model` is given and not
    /// bypassed.
    pub fn new(cfg: SessionConfig, model: Option<Arc<Mctcn>>) -> Result<Self> {
        cfg.validate_settings()?;
        if cfg.network_enabled() && model.is_none() {
            return Err(Error::Config(
                "a weight file is configured but no model was supplied".into(),
            ));
        }
        check_stages(&cfg.bypass, !cfg.bypass.network && model.is_some())?;
        let stft = StftConfig::new(cfg.stft.fft_size)?;
        let network = match (cfg.bypass.network, model) {
            (true, _) | (false, None) => None,
            (false, Some(model)) => {
                if model.config() != &cfg.model {
                    return Err(Error::Config(
                        "model does not match the session's model config".into(),
                    ));
                }
                Some(NetworkStage {
                    state: model.new_state(),
                    model,
                    error_stft: StreamingStft::new(stft.clone()),
                    echo_stft: StreamingStft::new(stft.clone()),
                    synthesis: OverlapAdd::new(stft.clone()),
                })
            }
        };
        Ok(Self {
            hop: stft.hop(),
            estimator: (!cfg.bypass.delay).then(|| DelayEstimator::new(cfg.delay.clone())),
            line: DelayLine::new(cfg.delay.max_lag_samples),
            filter: if cfg.bypass.filter {
                None
            } else {
                Some(MdfFilter::new(cfg.mdf.clone())?)
            },
            applied_lag: 0,
            network,
            cfg,
        })
    }

    /// Builds a session from the config alone, loading weights if needed.
    pub fn from_config(cfg: SessionConfig) -> Result<Self> {
        let model = cfg.load_model()?;
        Self::new(cfg, model)
    }

    pub fn config(&self) -> &SessionConfig {
        &self.cfg
    }

    pub fn hop_len(&self) -> usize {
        self.hop
    }

    /// Output delay in samples relative to the input.
    pub fn latency(&self) -> usize {
        if self.network.is_some() {
            self.hop
        } else {
            0
        }
    }

    /// Processes one hop of microphone and far-end samples.
    pub fn process_hop(&mut self, near: &[f64], far: &[f64]) -> Result<HopOutput> {
        if near.len() != self.hop || far.len() != self.hop {
            return Err(Error::InvalidInput(format!(
                "hops hold {} samples, got near {} and far {}",
                self.hop,
                near.len(),
                far.len()
            )));
        }
        crate::signal::check_finite(near)?;
        crate::signal::check_finite(far)?;

        let delay = self.estimator.as_mut().map(|e| e.push_hop(near, far));
        let lag = delay
            .as_ref()
            .map_or(0, |d| compensation_lag(d, self.cfg.delay.threshold_samples))
            .min(self.cfg.delay.max_lag_samples)
            .saturating_sub(self.cfg.delay.headroom_samples);
        let far = self.line.process(far, lag);
        if lag != self.applied_lag {
            log::debug!(
                "compensation lag {} -> {lag} samples; restarting the echo filter",
                self.applied_lag
            );
            self.applied_lag = lag;
            if let Some(f) = self.filter.as_mut() {
                f.reset();
            }
        }

        let (error, echo) = match self.filter.as_mut() {
            Some(f) => {
                let out = f.process_block(&far, near)?;
                (out.error, out.echo)
            }
            None => (near.to_vec(), vec![0.0; self.hop]),
        };

        let (samples, masks) = match self.network.as_mut() {
            None => (error.clone(), None),
            Some(net) => {
                let fe = net.error_stft.push(&error);
                let fy = net.echo_stft.push(&echo);
                match (fe, fy) {
                    (Some(fe), Some(fy)) => {
                        let (spec, masks) =
                            net.model
                                .process_frame(&mut net.state, &fe.bins, &fy.bins)?;
                        let frame = SpectralFrame {
                            index: fe.index,
                            bins: spec,
                        };
                        (net.synthesis.push(&frame)?, Some(masks))
                    }
                    _ => (vec![0.0; self.hop], None),
                }
            }
        };
        Ok(HopOutput {
            samples,
            error,
            echo,
            delay,
            masks,
        })
    }
}

/// Enhances whole signals. The output is aligned with `near`; when the
/// inputs differ in length both are cut to the shorter one.
pub fn enhance_with(session: &mut Session, near: &Waveform, far: &Waveform) -> Result<Waveform> {
    let n = near.len().min(far.len());
    if near.len() != far.len() {
        log::warn!(
            "near ({}) and far ({}) lengths differ; truncating to {n} samples",
            near.len(),
            far.len()
        );
    }
    let hop = session.hop_len();
    let latency = session.latency();
    let hops = (n + latency).div_ceil(hop);
    let mut out = Vec::with_capacity(hops * hop);
    let mut nb = vec![0.0; hop];
    let mut fb = vec![0.0; hop];
    for h in 0..hops {
        let start = h * hop;
        for i in 0..hop {
            let idx = start + i;
            (nb[i], fb[i]) = if idx < n {
                (near.samples()[idx], far.samples()[idx])
            } else {
                (0.0, 0.0)
            };
        }
        out.extend(session.process_hop(&nb, &fb)?.samples);
    }
    out.drain(..latency.min(out.len()));
    out.truncate(n);
    Waveform::new(out)
}

/// Runs a fresh session over whole signals.
pub fn enhance(near: &Waveform, far: &Waveform, cfg: &SessionConfig) -> Result<Waveform> {
    let mut session = Session::from_config(cfg.clone())?;
    enhance_with(&mut session, near, far)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bypass_network() -> SessionConfig {
        SessionConfig {
            bypass: Bypass {
                network: true,
                ..Default::default()
            },
            ..Default::default()
        }
    }

    #[test]
    fn all_stages_bypassed_is_rejected() {
        let cfg = SessionConfig {
            bypass: Bypass {
                delay: true,
                filter: true,
                network: true,
            },
            ..Default::default()
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn absent_weights_skip_the_network() {
        let s = Session::from_config(SessionConfig::default()).unwrap();
        assert_eq!(s.latency(), 0);
        let cfg = SessionConfig {
            bypass: Bypass {
                delay: true,
                filter: true,
                network: false,
            },
            ..Default::default()
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn unreadable_weights_are_a_startup_error() {
        let cfg = SessionConfig {
            weights: Some(PathBuf::from("/nonexistent/weights.bin")),
            ..Default::default()
        };
        assert!(Session::from_config(cfg.clone()).is_err());
        assert!(Session::new(cfg, None).is_err());
    }

    #[test]
    fn config_toml_round_trip() {
        let mut cfg = bypass_network();
        cfg.mdf.base_step = 0.25;
        cfg.delay.peaks_per_frame = 4;
        let back = SessionConfig::from_toml(&cfg.to_toml()).unwrap();
        assert_eq!(back, cfg);
        assert!(SessionConfig::from_toml("[mdf]\nblock_len = 128\n").is_err());
        assert!(SessionConfig::from_toml("bogus = true").is_err());
    }

    #[test]
    fn silent_far_end_passes_near_through() {
        let near = Waveform::new(
            (0..5000)
                .map(|i| ((i * 37 % 101) as f64 - 50.0) / 100.0)
                .collect(),
        )
        .unwrap();
        let far = Waveform::zeros(5000);
        let out = enhance(&near, &far, &bypass_network()).unwrap();
        assert_eq!(out, near);
    }

    #[test]
    fn mismatched_lengths_truncate() {
        let near = Waveform::new(vec![0.1; 1000]).unwrap();
        let far = Waveform::zeros(700);
        assert_eq!(enhance(&near, &far, &bypass_network()).unwrap().len(), 700);
    }

    #[test]
    fn wrong_hop_or_non_finite_input_is_rejected() {
        let mut s = Session::new(bypass_network(), None).unwrap();
        assert!(s.process_hop(&[0.0; 10], &[0.0; 10]).is_err());
        let mut bad = vec![0.0; 256];
        bad[3] = f64::INFINITY;
        assert!(s.process_hop(&bad, &[0.0; 256]).is_err());
    }
}
