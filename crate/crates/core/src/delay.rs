//! Near-end/far-end delay estimation from spectral-peak fingerprints.
//!
//! Every hop, the strongest local maxima of the near and far spectra form a
//! pattern. A candidate lag is scored by how many near-end peaks reappear in
//! the far-end pattern that many hops earlier, over a one second window.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::signal::{SpectralFrame, StftConfig, StreamingStft, Waveform, HOP};

/// Peaks whose magnitude is this far below the frame's strongest peak are
/// not part of the pattern (60 dB).
const RELATIVE_PEAK_FLOOR: f64 = 1e-3;

/// Frames with less energy than this fraction of a full-scale frame are
/// treated as silent.
pub const SILENCE_FLOOR: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PeakPattern {
    pub frame_index: usize,
    /// Bin indices ordered by decreasing magnitude.
    pub peaks: Vec<u16>,
}

impl PeakPattern {
    pub fn empty(frame_index: usize) -> Self {
        Self {
            frame_index,
            peaks: Vec::new(),
        }
    }

    fn contains(&self, bin: u16) -> bool {
        self.peaks.contains(&bin)
    }
}

/// Up to `max_peaks` strict local maxima of the magnitude spectrum, strongest
/// first. Silent frames give an empty pattern.
pub fn extract_pattern(frame: &SpectralFrame, max_peaks: usize) -> PeakPattern {
    let n = frame.bins.len();
    if n < 3 || max_peaks == 0 {
        return PeakPattern::empty(frame.index);
    }
    // Energy of a full-scale frame under a periodic Hann window: 3N/8.
    let fft_size = 2 * (n - 1);
    let full_scale = 0.375 * fft_size as f64;
    if frame.energy() < SILENCE_FLOOR * full_scale {
        return PeakPattern::empty(frame.index);
    }
    let mags: Vec<f64> = frame.bins.iter().map(|b| b.norm()).collect();
    let mut peaks: Vec<(usize, f64)> = (1..n - 1)
        .filter(|&k| mags[k] > mags[k - 1] && mags[k] > mags[k + 1])
        .map(|k| (k, mags[k]))
        .collect();
    // Stable sort keeps lower bins first among equal magnitudes.
    peaks.sort_by(|a, b| b.1.total_cmp(&a.1));
    let strongest = peaks.first().map_or(0.0, |p| p.1);
    PeakPattern {
        frame_index: frame.index,
        peaks: peaks
            .into_iter()
            .take_while(|&(_, m)| m >= strongest * RELATIVE_PEAK_FLOOR)
            .take(max_peaks)
            .map(|(k, _)| k as u16)
            .collect(),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DelayConfig {
    pub peaks_per_frame: usize,
    /// Number of recent near-end patterns scored per update (1 s).
    pub window_frames: usize,
    pub max_lag_samples: usize,
    /// Compensation is applied only to lags strictly above this.
    pub threshold_samples: usize,
    /// Scores below this leave the previous estimate in place.
    pub match_floor: f64,
    /// Relative score margin a new lag needs over the current one.
    pub switch_margin: f64,
    /// Consecutive winning updates before a new lag replaces the current one.
    pub switch_updates: usize,
    /// The smallest lag scoring at least this fraction of the best score is
    /// taken as the winner.
    pub plateau_ratio: f64,
    /// Part of a compensated lag the streaming pipeline leaves to the echo
    /// filter, so an overestimate does not cut off the direct path.
    pub headroom_samples: usize,
}

impl Default for DelayConfig {
    fn default() -> Self {
        Self {
            peaks_per_frame: 6,
            window_frames: 62,
            max_lag_samples: 16_000,
            threshold_samples: 4_000,
            match_floor: 0.15,
            switch_margin: 0.1,
            switch_updates: 5,
            plateau_ratio: 0.8,
            headroom_samples: 512,
        }
    }
}

impl DelayConfig {
    pub fn validate(&self) -> Result<()> {
        if self.peaks_per_frame == 0 || self.window_frames == 0 || self.switch_updates == 0 {
            return Err(Error::Config(
                "peaks per frame, window and switch updates must be positive".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.match_floor) || self.switch_margin < 0.0 {
            return Err(Error::Config(
                "match floor must lie in [0, 1] and the margin be non-negative".into(),
            ));
        }
        if !(self.plateau_ratio > 0.0 && self.plateau_ratio <= 1.0) {
            return Err(Error::Config(format!(
                "plateau ratio {} not in (0, 1]",
                self.plateau_ratio
            )));
        }
        if self.headroom_samples > self.threshold_samples {
            return Err(Error::Config(
                "headroom must not exceed the compensation threshold".into(),
            ));
        }
        Ok(())
    }

    pub fn max_lag_hops(&self) -> usize {
        self.max_lag_samples / HOP
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DelayEstimate {
    /// Far-to-near delay in samples, a multiple of the hop.
    pub lag: usize,
    /// Fraction of near-end peaks matched at `lag`, in `[0, 1]`.
    pub confidence: f64,
    pub frame_index: usize,
    /// Set while the history is shorter than the scoring window.
    pub provisional: bool,
}

impl DelayEstimate {
    pub fn zero(frame_index: usize) -> Self {
        Self {
            lag: 0,
            confidence: 0.0,
            frame_index,
            provisional: true,
        }
    }

    pub fn lag_ms(&self) -> f64 {
        self.lag as f64 * 1000.0 / f64::from(crate::SAMPLE_RATE)
    }

    pub fn lag_hops(&self) -> usize {
        self.lag / HOP
    }
}

/// Match score for every lag in `0..=max_lag_hops`.
///
/// Both histories are aligned in time and end at the newest frame. The score
/// for lag `L` is the number of near peaks at frame `t` also present in the
/// far pattern at `t - L`, summed over the newest `window` near frames and
/// divided by the total number of near peaks in those frames.
pub fn match_scores(
    near: &[PeakPattern],
    far: &[PeakPattern],
    max_lag_hops: usize,
    window: usize,
) -> Vec<f64> {
    let len = near.len().min(far.len());
    let near = &near[near.len() - len..];
    let far = &far[far.len() - len..];
    let first = len.saturating_sub(window);
    (0..=max_lag_hops)
        .map(|lag| {
            let (mut hits, mut total) = (0usize, 0usize);
            for t in first.max(lag)..len {
                let pattern = &near[t];
                total += pattern.peaks.len();
                hits += pattern
                    .peaks
                    .iter()
                    .filter(|&&bin| far[t - lag].contains(bin))
                    .count();
            }
            if total == 0 {
                0.0
            } else {
                hits as f64 / total as f64
            }
        })
        .collect()
}

fn best_lag(scores: &[f64], plateau_ratio: f64) -> (usize, f64) {
    let top = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    scores
        .iter()
        .position(|&s| s >= plateau_ratio * top)
        .map_or((0, top), |lag| (lag, scores[lag]))
}

/// One-shot estimate from two pattern histories. When the best score falls
/// below the floor, `previous` is returned with the observed confidence.
pub fn estimate_delay(
    near_history: &[PeakPattern],
    far_history: &[PeakPattern],
    cfg: &DelayConfig,
    previous: Option<&DelayEstimate>,
) -> DelayEstimate {
    let frame_index = near_history.last().map_or(0, |p| p.frame_index);
    let provisional = near_history.len() < cfg.window_frames;
    let scores = match_scores(
        near_history,
        far_history,
        cfg.max_lag_hops(),
        cfg.window_frames,
    );
    let (lag, score) = best_lag(&scores, cfg.plateau_ratio);
    if score < cfg.match_floor {
        return DelayEstimate {
            lag: previous.map_or(0, |p| p.lag),
            confidence: score.max(0.0),
            frame_index,
            provisional,
        };
    }
    DelayEstimate {
        lag: lag * HOP,
        confidence: score,
        frame_index,
        provisional,
    }
}

/// Streaming estimator producing exactly one estimate per hop.
#[derive(Clone, Debug)]
pub struct DelayEstimator {
    cfg: DelayConfig,
    near_stft: StreamingStft,
    far_stft: StreamingStft,
    near_history: VecDeque<PeakPattern>,
    far_history: VecDeque<PeakPattern>,
    current: Option<usize>,
    challenger: Option<(usize, usize)>,
    last: DelayEstimate,
    hops: usize,
}

impl DelayEstimator {
    pub fn new(cfg: DelayConfig) -> Self {
        let stft = StftConfig::default();
        Self {
            near_stft: StreamingStft::new(stft.clone()),
            far_stft: StreamingStft::new(stft),
            near_history: VecDeque::new(),
            far_history: VecDeque::new(),
            current: None,
            challenger: None,
            last: DelayEstimate::zero(0),
            hops: 0,
            cfg,
        }
    }

    pub fn config(&self) -> &DelayConfig {
        &self.cfg
    }

    pub fn current(&self) -> &DelayEstimate {
        &self.last
    }

    /// Consumes one hop of near-end (microphone) and far-end samples.
    pub fn push_hop(&mut self, near: &[f64], far: &[f64]) -> DelayEstimate {
        self.hops += 1;
        let frames = (self.near_stft.push(near), self.far_stft.push(far));
        match frames {
            (Some(n), Some(f)) => {
                let np = extract_pattern(&n, self.cfg.peaks_per_frame);
                let fp = extract_pattern(&f, self.cfg.peaks_per_frame);
                self.push_patterns(np, fp)
            }
            _ => {
                self.last.frame_index = self.hops - 1;
                self.last.clone()
            }
        }
    }

    /// Updates the estimate with one new pair of patterns.
    pub fn push_patterns(&mut self, near: PeakPattern, far: PeakPattern) -> DelayEstimate {
        let keep = self.cfg.window_frames + self.cfg.max_lag_hops();
        let frame_index = near.frame_index;
        self.near_history.push_back(near);
        self.far_history.push_back(far);
        while self.near_history.len() > keep {
            self.near_history.pop_front();
            self.far_history.pop_front();
        }
        let near: Vec<_> = self.near_history.iter().cloned().collect();
        let far: Vec<_> = self.far_history.iter().cloned().collect();
        let scores = match_scores(&near, &far, self.cfg.max_lag_hops(), self.cfg.window_frames);
        let (best, best_score) = best_lag(&scores, self.cfg.plateau_ratio);

        if best_score >= self.cfg.match_floor {
            match self.current {
                None => {
                    self.current = Some(best);
                    self.challenger = None;
                }
                Some(cur) if cur == best => self.challenger = None,
                Some(cur) => {
                    if best_score >= (1.0 + self.cfg.switch_margin) * scores[cur] {
                        let count = match self.challenger {
                            Some((lag, n)) if lag == best => n + 1,
                            _ => 1,
                        };
                        if count >= self.cfg.switch_updates {
                            self.current = Some(best);
                            self.challenger = None;
                        } else {
                            self.challenger = Some((best, count));
                        }
                    } else {
                        self.challenger = None;
                    }
                }
            }
        } else {
            self.challenger = None;
        }

        let confidence = match self.current {
            Some(lag) if best_score >= self.cfg.match_floor => scores[lag],
            _ => best_score.max(0.0),
        };
        self.last = DelayEstimate {
            lag: self.current.unwrap_or(0) * HOP,
            confidence,
            frame_index,
            provisional: self.near_history.len() < self.cfg.window_frames,
        };
        self.last.clone()
    }
}

/// Lag actually applied to the far-end reference: the estimate when it
/// exceeds the threshold, otherwise none (the filter tail absorbs it).
pub fn compensation_lag(est: &DelayEstimate, threshold_samples: usize) -> usize {
    if est.lag > threshold_samples {
        est.lag
    } else {
        0
    }
}

/// Delays `x` by the estimated lag when it exceeds `threshold_samples`,
/// keeping the original length.
pub fn apply_compensation(x: &Waveform, est: &DelayEstimate, threshold_samples: usize) -> Waveform {
    let lag = compensation_lag(est, threshold_samples);
    if lag == 0 {
        return x.clone();
    }
    let n = x.len();
    let mut out = vec![0.0; n];
    if lag < n {
        out[lag..].copy_from_slice(&x.samples()[..n - lag]);
    }
    Waveform::new(out).expect("delayed copy of finite samples")
}

/// Streaming variable delay for the far-end reference.
#[derive(Clone, Debug)]
pub struct DelayLine {
    buf: VecDeque<f64>,
    capacity: usize,
}

impl DelayLine {
    pub fn new(max_delay: usize) -> Self {
        Self {
            buf: VecDeque::from(vec![0.0; max_delay]),
            capacity: max_delay,
        }
    }

    /// Appends `block` and returns it delayed by `delay` samples.
    pub fn process(&mut self, block: &[f64], delay: usize) -> Vec<f64> {
        assert!(delay <= self.capacity, "delay exceeds line capacity");
        self.buf.extend(block.iter().copied());
        let len = self.buf.len();
        let start = len - block.len() - delay;
        let out = self
            .buf
            .range(start..start + block.len())
            .copied()
            .collect();
        while self.buf.len() > self.capacity + block.len() {
            self.buf.pop_front();
        }
        out
    }
}
