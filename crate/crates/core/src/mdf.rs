//! Multidelay block frequency-domain (MDF) adaptive echo canceller.
//!
//! The echo path is split into `num_blocks` partitions of `block_len` taps,
//! each held as a `2 * block_len` point spectrum and applied with overlap-save.
//! Two copies of the weights exist: the background filter adapts on every
//! block, the foreground filter produces the output. At the start of every
//! comparison window the background is snapshotted; the snapshot is scored
//! against the foreground on blocks it has not adapted on and is copied into
//! the foreground only when it wins clearly.
//!
//! Adaptation is NLMS-style with four refinements:
//!
//! * proportionate step sizes per partition (block PNLMS),
//! * per-bin normalization that also counts the recent error power, which
//!   slows adaptation in bins where the far end is buried under near-end
//!   sound,
//! * a global step from a residual-echo ("leak") estimate, which collapses
//!   during double talk,
//! * alternating gradient constraints: per iteration only the partition with
//!   the most energy and one rotating partition are projected back onto
//!   `block_len`-tap filters.

use std::collections::VecDeque;
use std::fmt;
use std::sync::Arc;

use num_complex::Complex64;
use realfft::{ComplexToReal, RealFftPlanner, RealToComplex};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::signal::check_finite;

const ZERO: Complex64 = Complex64::new(0.0, 0.0);

/// Smoothing of the per-bin error/echo power used by the leak estimate.
const SPEC_AVERAGE: f64 = 0.016;
/// Leak statistics smoothing, bounded by echo energy and error energy.
const LEAK_BETA0: f64 = 0.032;
const LEAK_BETA_MAX: f64 = 0.008;
const MIN_LEAK: f64 = 0.005;
/// Leak needed before leaving the warm-up regime.
const ADAPTED_LEAK: f64 = 0.03;
/// Overestimation factor applied to the residual echo estimate.
const LEAK_GAIN: f64 = 3.0;
/// Far-end mean square below which the warm-up step is zero (-60 dBFS).
const FAR_ACTIVITY: f64 = 1e-6;
/// Per-block smoothing of the error power used in the normalization.
const ERROR_POWER_SMOOTHING: f64 = 0.3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MdfConfig {
    pub block_len: usize,
    pub num_blocks: usize,
    /// Largest global step.
    pub base_step: f64,
    /// Per-block smoothing of the far-end power estimate.
    pub power_smoothing: f64,
    /// Regularization relative to the mean far-end power.
    pub regularization: f64,
    /// Share of the uniform step every partition keeps under PNLMS.
    pub pnlms_floor: f64,
    /// Weight of the smoothed error power in the per-bin normalization.
    pub error_regularization: f64,
    /// Relative error reduction the background needs to be promoted.
    pub promotion_margin: f64,
    /// Minimum squared error reduction, relative to the foreground error
    /// times the energy of the change, for a promotion.
    pub promotion_confidence: f64,
    /// Window, in blocks, over which the two paths are compared.
    pub compare_blocks: usize,
    /// Background error over near energy that counts as divergence.
    pub divergence_factor: f64,
    /// Consecutive divergent blocks before the background is reset.
    pub divergence_blocks: usize,
}

impl Default for MdfConfig {
    fn default() -> Self {
        Self {
            block_len: 256,
            num_blocks: 18,
            base_step: 0.5,
            power_smoothing: 0.9,
            regularization: 1e-6,
            pnlms_floor: 0.5,
            error_regularization: 0.01,
            promotion_margin: 0.1,
            promotion_confidence: 0.75,
            compare_blocks: 32,
            divergence_factor: 4.0,
            divergence_blocks: 32,
        }
    }
}

impl MdfConfig {
    pub fn fft_size(&self) -> usize {
        2 * self.block_len
    }

    pub fn num_bins(&self) -> usize {
        self.block_len + 1
    }

    /// Echo path length covered by the filter, in samples.
    pub fn tail_samples(&self) -> usize {
        self.block_len * self.num_blocks
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.block_len == 0 || self.num_blocks == 0 {
            return bad("block length and block count must be positive".into());
        }
        if !(self.base_step > 0.0 && self.base_step <= 1.0) {
            return bad(format!("base step {} not in (0, 1]", self.base_step));
        }
        if !(0.0..1.0).contains(&self.power_smoothing) {
            return bad(format!(
                "power smoothing {} not in [0, 1)",
                self.power_smoothing
            ));
        }
        if !(0.0..=1.0).contains(&self.pnlms_floor) {
            return bad(format!("pnlms floor {} not in [0, 1]", self.pnlms_floor));
        }
        if !(0.0..1.0).contains(&self.promotion_margin) {
            return bad(format!(
                "promotion margin {} not in [0, 1)",
                self.promotion_margin
            ));
        }
        if self.regularization <= 0.0 || self.divergence_factor <= 0.0 {
            return bad("regularization and divergence factor must be positive".into());
        }
        if !(self.error_regularization >= 0.0 && self.promotion_confidence >= 0.0) {
            return bad(
                "error regularization and promotion confidence must be non-negative".into(),
            );
        }
        if self.compare_blocks == 0 || self.divergence_blocks == 0 {
            return bad("comparison and divergence windows must be positive".into());
        }
        Ok(())
    }
}

#[derive(Clone, Copy)]
enum Path {
    Foreground,
    Background,
    Candidate,
}

/// One block of filter output. `error + echo == near` holds sample-wise
/// whenever the near block holds binary32 values.
#[derive(Clone, Debug, PartialEq)]
pub struct FilterOutput {
    pub error: Vec<f64>,
    pub echo: Vec<f64>,
}

/// Residual-echo ("leak") statistics driving the global step size.
#[derive(Clone, Debug)]
struct LeakEstimator {
    error_psd: Vec<f64>,
    echo_psd: Vec<f64>,
    pey: f64,
    pyy: f64,
    leak: f64,
    adapted: bool,
    warmup_sum: f64,
    echo_energy: f64,
    far_mean_square: f64,
}

impl LeakEstimator {
    fn new(bins: usize) -> Self {
        Self {
            error_psd: vec![0.0; bins],
            echo_psd: vec![0.0; bins],
            pey: 0.0,
            pyy: 0.0,
            leak: 0.0,
            adapted: false,
            warmup_sum: 0.0,
            echo_energy: 0.0,
            far_mean_square: 0.0,
        }
    }

    /// Regresses fluctuations of the error power spectrum on fluctuations of
    /// the echo-estimate power spectrum.
    fn update(&mut self, error: &[Complex64], echo: &[Complex64], error_energy: f64) {
        let (mut pey, mut pyy) = (0.0, 0.0);
        for (i, (e, y)) in error.iter().zip(echo).enumerate() {
            let rf = e.norm_sqr();
            let yf = y.norm_sqr();
            let de = rf - self.error_psd[i];
            let dy = yf - self.echo_psd[i];
            pey += de * dy;
            pyy += dy * dy;
            self.error_psd[i] += SPEC_AVERAGE * (rf - self.error_psd[i]);
            self.echo_psd[i] += SPEC_AVERAGE * (yf - self.echo_psd[i]);
        }
        let pyy = pyy.sqrt();
        let pey = if pyy > 0.0 { pey / pyy } else { 0.0 };
        let see = error_energy.max(1e-12);
        let alpha = (LEAK_BETA0 * self.echo_energy).min(LEAK_BETA_MAX * see) / see;
        self.pey = (1.0 - alpha) * self.pey + alpha * pey;
        self.pyy = (1.0 - alpha) * self.pyy + alpha * pyy;
        self.pyy = self.pyy.max(1e-12);
        self.pey = self.pey.clamp(MIN_LEAK * self.pyy, self.pyy);
        self.leak = self.pey / self.pyy;
    }
}

/// Adaptive filter state for one session.
pub struct MdfFilter {
    cfg: MdfConfig,
    forward: Arc<dyn RealToComplex<f64>>,
    inverse: Arc<dyn ComplexToReal<f64>>,
    scratch: Vec<Complex64>,
    time_buf: Vec<f64>,
    freq_buf: Vec<Complex64>,
    background: Vec<Complex64>,
    foreground: Vec<Complex64>,
    /// Background snapshot scored against the foreground over one window.
    candidate: Vec<Complex64>,
    /// Far-end spectra, newest first.
    far_spectra: VecDeque<Vec<Complex64>>,
    far_prev: Vec<f64>,
    power: Vec<f64>,
    /// Per-block foreground error, candidate error and path difference
    /// energies of the current comparison window.
    fg_errors: VecDeque<f64>,
    candidate_errors: VecDeque<f64>,
    path_diffs: VecDeque<f64>,
    error_power: Vec<f64>,
    divergent_run: usize,
    lr: LeakEstimator,
    iteration: usize,
    last_constrained: [usize; 2],
    last_step: f64,
    adapt: bool,
}

impl fmt::Debug for MdfFilter {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("MdfFilter")
            .field("cfg", &self.cfg)
            .field("iteration", &self.iteration)
            .field("leak", &self.lr.leak)
            .field("adapted", &self.lr.adapted)
            .finish_non_exhaustive()
    }
}

impl Clone for MdfFilter {
    fn clone(&self) -> Self {
        let mut planner = RealFftPlanner::<f64>::new();
        Self {
            cfg: self.cfg.clone(),
            forward: planner.plan_fft_forward(self.cfg.fft_size()),
            inverse: planner.plan_fft_inverse(self.cfg.fft_size()),
            scratch: self.scratch.clone(),
            time_buf: self.time_buf.clone(),
            freq_buf: self.freq_buf.clone(),
            background: self.background.clone(),
            foreground: self.foreground.clone(),
            candidate: self.candidate.clone(),
            far_spectra: self.far_spectra.clone(),
            far_prev: self.far_prev.clone(),
            power: self.power.clone(),
            fg_errors: self.fg_errors.clone(),
            candidate_errors: self.candidate_errors.clone(),
            path_diffs: self.path_diffs.clone(),
            error_power: self.error_power.clone(),
            divergent_run: self.divergent_run,
            lr: self.lr.clone(),
            iteration: self.iteration,
            last_constrained: self.last_constrained,
            last_step: self.last_step,
            adapt: self.adapt,
        }
    }
}

impl MdfFilter {
    pub fn new(cfg: MdfConfig) -> Result<Self> {
        cfg.validate()?;
        let mut planner = RealFftPlanner::<f64>::new();
        let n = cfg.fft_size();
        let bins = cfg.num_bins();
        let forward = planner.plan_fft_forward(n);
        let inverse = planner.plan_fft_inverse(n);
        let scratch_len = forward.get_scratch_len().max(inverse.get_scratch_len());
        Ok(Self {
            scratch: vec![ZERO; scratch_len],
            time_buf: vec![0.0; n],
            freq_buf: vec![ZERO; bins],
            background: vec![ZERO; bins * cfg.num_blocks],
            foreground: vec![ZERO; bins * cfg.num_blocks],
            candidate: vec![ZERO; bins * cfg.num_blocks],
            far_spectra: (0..cfg.num_blocks).map(|_| vec![ZERO; bins]).collect(),
            far_prev: vec![0.0; cfg.block_len],
            power: vec![0.0; bins],
            fg_errors: VecDeque::with_capacity(cfg.compare_blocks),
            candidate_errors: VecDeque::with_capacity(cfg.compare_blocks),
            path_diffs: VecDeque::with_capacity(cfg.compare_blocks),
            error_power: vec![0.0; bins],
            divergent_run: 0,
            lr: LeakEstimator::new(bins),
            iteration: 0,
            last_constrained: [0, 0],
            last_step: 0.0,
            adapt: true,
            forward,
            inverse,
            cfg,
        })
    }

    pub fn config(&self) -> &MdfConfig {
        &self.cfg
    }

    /// Loads a known echo path (at most `tail_samples` taps) into both weight
    /// sets.
    pub fn set_impulse_response(&mut self, taps: &[f64]) -> Result<()> {
        if taps.len() > self.cfg.tail_samples() {
            return Err(Error::InvalidInput(format!(
                "impulse response of {} taps exceeds the {} tap filter",
                taps.len(),
                self.cfg.tail_samples()
            )));
        }
        let l = self.cfg.block_len;
        let bins = self.cfg.num_bins();
        for k in 0..self.cfg.num_blocks {
            self.time_buf.iter_mut().for_each(|v| *v = 0.0);
            let start = (k * l).min(taps.len());
            let end = ((k + 1) * l).min(taps.len());
            self.time_buf[..end - start].copy_from_slice(&taps[start..end]);
            self.forward
                .process_with_scratch(&mut self.time_buf, &mut self.freq_buf, &mut self.scratch)
                .expect("plan sizes");
            self.background[k * bins..(k + 1) * bins].copy_from_slice(&self.freq_buf);
        }
        self.foreground.copy_from_slice(&self.background);
        self.candidate.copy_from_slice(&self.background);
        Ok(())
    }

    /// Freezes or resumes adaptation of the background filter.
    pub fn set_adaptation(&mut self, enabled: bool) {
        self.adapt = enabled;
    }

    pub fn foreground(&self) -> &[Complex64] {
        &self.foreground
    }

    pub fn background(&self) -> &[Complex64] {
        &self.background
    }

    /// Partitions constrained during the last update.
    pub fn last_constrained(&self) -> [usize; 2] {
        self.last_constrained
    }

    /// Global step used in the last update.
    pub fn last_step(&self) -> f64 {
        self.last_step
    }

    pub fn leak_estimate(&self) -> f64 {
        self.lr.leak
    }

    pub fn is_adapted(&self) -> bool {
        self.lr.adapted
    }

    pub fn is_finite(&self) -> bool {
        let ok = |w: &[Complex64]| w.iter().all(|c| c.re.is_finite() && c.im.is_finite());
        ok(&self.background)
            && ok(&self.foreground)
            && self.power.iter().all(|p| p.is_finite())
            && self.lr.leak.is_finite()
            && self.lr.pey.is_finite()
    }

    fn block_slice(weights: &[Complex64], k: usize, bins: usize) -> &[Complex64] {
        &weights[k * bins..(k + 1) * bins]
    }

    /// Time-domain echo estimate of `weights` for the current far history.
    fn echo_estimate(&mut self, path: Path) -> Vec<f64> {
        let bins = self.cfg.num_bins();
        let weights = match path {
            Path::Foreground => &self.foreground,
            Path::Background => &self.background,
            Path::Candidate => &self.candidate,
        };
        let acc = &mut self.freq_buf;
        acc.iter_mut().for_each(|v| *v = ZERO);
        for (k, x) in self.far_spectra.iter().enumerate() {
            let w = Self::block_slice(weights, k, bins);
            for ((a, &wi), &xi) in acc.iter_mut().zip(w).zip(x) {
                *a += wi * xi;
            }
        }
        acc[0].im = 0.0;
        acc[bins - 1].im = 0.0;
        self.inverse
            .process_with_scratch(acc, &mut self.time_buf, &mut self.scratch)
            .expect("plan sizes");
        let scale = 1.0 / self.cfg.fft_size() as f64;
        self.time_buf[self.cfg.block_len..]
            .iter()
            .map(|v| v * scale)
            .collect()
    }

    /// Spectrum of `block` placed in the second half of a zeroed frame.
    fn tail_spectrum(&mut self, block: &[f64]) -> Vec<Complex64> {
        let l = self.cfg.block_len;
        self.time_buf[..l].iter_mut().for_each(|v| *v = 0.0);
        self.time_buf[l..].copy_from_slice(block);
        self.forward
            .process_with_scratch(&mut self.time_buf, &mut self.freq_buf, &mut self.scratch)
            .expect("plan sizes");
        self.freq_buf.clone()
    }

    /// Processes one block of far-end (already delay compensated) and
    /// near-end samples. Returns the foreground error and echo estimate.
    pub fn process_block(&mut self, far: &[f64], near: &[f64]) -> Result<FilterOutput> {
        let l = self.cfg.block_len;
        if far.len() != l || near.len() != l {
            return Err(Error::InvalidInput(format!(
                "filter blocks must hold {l} samples, got far {} and near {}",
                far.len(),
                near.len()
            )));
        }
        check_finite(far)?;
        check_finite(near)?;

        // Far-end spectrum of [previous block, current block].
        self.time_buf[..l].copy_from_slice(&self.far_prev);
        self.time_buf[l..].copy_from_slice(far);
        self.far_prev.copy_from_slice(far);
        let mut spectrum = self.far_spectra.pop_back().expect("history is never empty");
        self.forward
            .process_with_scratch(&mut self.time_buf, &mut spectrum, &mut self.scratch)
            .expect("plan sizes");
        self.far_spectra.push_front(spectrum);

        let fg_echo = self.echo_estimate(Path::Foreground);
        let mut echo = Vec::with_capacity(l);
        let mut error = Vec::with_capacity(l);
        for (&d, &y) in near.iter().zip(&fg_echo) {
            let y = decomposable_echo(d, y);
            echo.push(y);
            error.push(d - y);
        }

        let bg_echo = self.echo_estimate(Path::Background);
        let bg_error: Vec<f64> = near.iter().zip(&bg_echo).map(|(d, y)| d - y).collect();
        let candidate_echo = self.echo_estimate(Path::Candidate);
        let candidate_energy: f64 = near
            .iter()
            .zip(&candidate_echo)
            .map(|(d, y)| (d - y) * (d - y))
            .sum();
        let path_diff: f64 = echo
            .iter()
            .zip(&candidate_echo)
            .map(|(a, b)| (a - b) * (a - b))
            .sum();

        let near_energy = energy(near);
        let fg_energy = energy(&error);
        let bg_energy = energy(&bg_error);

        if self.adapt {
            self.lr.echo_energy = energy(&bg_echo);
            self.lr.far_mean_square = energy(far) / l as f64;
            let err_spec = self.tail_spectrum(&bg_error);
            let echo_spec = self.tail_spectrum(&bg_echo);
            self.lr.update(&err_spec, &echo_spec, bg_energy);
            let step = self.learning_rate_control(near_energy, bg_energy);
            self.last_step = step;
            self.adapt_background(&err_spec, step);
            if !self.lr.adapted {
                self.lr.warmup_sum += step / self.cfg.base_step;
                if self.lr.warmup_sum > self.cfg.num_blocks as f64 && self.lr.leak > ADAPTED_LEAK {
                    self.lr.adapted = true;
                }
            }

            self.record_path_errors(fg_energy, candidate_energy, path_diff);
            if self.fg_errors.len() == self.cfg.compare_blocks {
                self.two_path_control();
                self.candidate.copy_from_slice(&self.background);
                self.clear_windows();
            }

            if bg_energy > self.cfg.divergence_factor * near_energy {
                self.divergent_run += 1;
            } else {
                self.divergent_run = 0;
            }
            if self.divergent_run >= self.cfg.divergence_blocks {
                log::warn!("background filter diverged; resetting");
                self.reset_background();
            }
        }
        self.iteration += 1;
        Ok(FilterOutput { error, echo })
    }

    /// Gradient step on the background weights followed by the alternating
    /// constraint.
    fn adapt_background(&mut self, err_spec: &[Complex64], step: f64) {
        let bins = self.cfg.num_bins();
        let scalings = self.pnlms_scalings();

        let s = self.cfg.power_smoothing;
        let mut norm = vec![0.0; bins];
        for (k, x) in self.far_spectra.iter().enumerate() {
            for (n, xi) in norm.iter_mut().zip(x) {
                *n += scalings[k] * xi.norm_sqr();
            }
        }
        for (p, &q) in self.power.iter_mut().zip(&norm) {
            *p = s * *p + (1.0 - s) * q;
        }
        let mean_power = self.power.iter().sum::<f64>() / bins as f64;
        let reg = self.cfg.regularization * mean_power + 1e-20;
        for (p, e) in self.error_power.iter_mut().zip(err_spec) {
            *p += ERROR_POWER_SMOOTHING * (e.norm_sqr() - *p);
        }
        let er = self.cfg.error_regularization;
        for ((n, &p), &e) in norm.iter_mut().zip(&self.power).zip(&self.error_power) {
            *n = n.max(p) + reg + er * e;
        }

        if step > 0.0 {
            for (k, x) in self.far_spectra.iter().enumerate() {
                let gain = step * scalings[k];
                let w = &mut self.background[k * bins..(k + 1) * bins];
                for i in 0..bins {
                    w[i] += x[i].conj() * err_spec[i] * (gain / norm[i]);
                }
            }
        }

        let strongest = (0..self.cfg.num_blocks)
            .max_by(|&a, &b| {
                block_energy(&self.background, a, bins).total_cmp(&block_energy(
                    &self.background,
                    b,
                    bins,
                ))
            })
            .unwrap_or(0);
        let m = self.cfg.num_blocks;
        let mut rotating = self.iteration % m;
        if rotating == strongest && m > 1 {
            rotating = (rotating + 1) % m;
        }
        self.last_constrained = [strongest, rotating];
        for k in [strongest, rotating] {
            let mut block = self.background[k * bins..(k + 1) * bins].to_vec();
            self.constrain_in_place(&mut block);
            self.background[k * bins..(k + 1) * bins].copy_from_slice(&block);
        }
    }

    fn constrain_in_place(&mut self, block: &mut [Complex64]) {
        let l = self.cfg.block_len;
        let n = self.cfg.fft_size();
        let last = block.len() - 1;
        block[0].im = 0.0;
        block[last].im = 0.0;
        self.inverse
            .process_with_scratch(block, &mut self.time_buf, &mut self.scratch)
            .expect("plan sizes");
        let scale = 1.0 / n as f64;
        for (i, v) in self.time_buf.iter_mut().enumerate() {
            *v = if i < l { *v * scale } else { 0.0 };
        }
        self.forward
            .process_with_scratch(&mut self.time_buf, block, &mut self.scratch)
            .expect("plan sizes");
    }

    /// Projects one partition spectrum onto the set of `block_len`-tap
    /// filters: inverse transform, zero the second half, forward transform.
    pub fn constrain_block(&mut self, block: &[Complex64]) -> Vec<Complex64> {
        let mut out = block.to_vec();
        self.constrain_in_place(&mut out);
        out
    }

    /// Per-partition share of the step, proportional to the coefficient norm
    /// of each background partition and mixed with a uniform floor. Sums to
    /// one.
    pub fn pnlms_scalings(&self) -> Vec<f64> {
        let bins = self.cfg.num_bins();
        let norms: Vec<f64> = (0..self.cfg.num_blocks)
            .map(|k| block_energy(&self.background, k, bins).sqrt())
            .collect();
        proportionate_scalings(&norms, self.cfg.pnlms_floor)
    }

    /// Effective per-partition step sizes for global step `step`.
    pub fn pnlms_step_sizes(&self, step: f64) -> Vec<f64> {
        self.pnlms_scalings()
            .into_iter()
            .map(|g| g * step)
            .collect()
    }

    /// Global step size in `[0, base_step]`.
    ///
    /// During warm-up the step follows the far-end activity. Afterwards it is
    /// the estimated ratio of residual echo to background error: when the
    /// error is dominated by near-end speech the step collapses, when it is
    /// mostly uncancelled echo the step approaches `base_step`.
    pub fn learning_rate_control(&self, near_energy: f64, error_energy: f64) -> f64 {
        let base = self.cfg.base_step;
        if near_energy <= 0.0 {
            return 0.0;
        }
        let error_energy = error_energy.max(1e-12);
        if !self.lr.adapted {
            if self.lr.far_mean_square < FAR_ACTIVITY {
                return 0.0;
            }
            return 0.5 * base;
        }
        let residual = LEAK_GAIN * self.lr.leak * self.lr.echo_energy;
        base * (residual / error_energy).clamp(0.0, 1.0)
    }

    /// Copies the background snapshot into the foreground when, over a full
    /// window, its error energy is below the foreground's by the promotion
    /// margin and the reduction is large against the energy of the change.
    /// Returns whether a promotion happened.
    pub fn two_path_control(&mut self) -> bool {
        if self.fg_errors.len() < self.cfg.compare_blocks {
            return false;
        }
        let fg: f64 = self.fg_errors.iter().sum();
        let candidate: f64 = self.candidate_errors.iter().sum();
        let diff: f64 = self.path_diffs.iter().sum();
        let gap = fg - candidate;
        let promote = candidate < (1.0 - self.cfg.promotion_margin) * fg
            && gap * gap > self.cfg.promotion_confidence * fg * diff;
        if promote {
            self.foreground.copy_from_slice(&self.candidate);
        }
        promote
    }

    /// Records one block of foreground error, snapshot error and path
    /// difference energy (also for driving
    /// [`two_path_control`](Self::two_path_control) in isolation).
    pub fn record_path_errors(&mut self, foreground: f64, candidate: f64, diff: f64) {
        let n = self.cfg.compare_blocks;
        push_window(&mut self.fg_errors, foreground, n);
        push_window(&mut self.candidate_errors, candidate, n);
        push_window(&mut self.path_diffs, diff, n);
    }

    /// Snapshot currently scored against the foreground.
    pub fn candidate(&self) -> &[Complex64] {
        &self.candidate
    }

    /// Forgets the echo path and all adaptation state.
    pub fn reset(&mut self) {
        for w in [
            &mut self.background,
            &mut self.foreground,
            &mut self.candidate,
        ] {
            w.iter_mut().for_each(|v| *v = ZERO);
        }
        self.far_spectra
            .iter_mut()
            .for_each(|x| x.iter_mut().for_each(|v| *v = ZERO));
        self.far_prev.iter_mut().for_each(|v| *v = 0.0);
        self.power.iter_mut().for_each(|v| *v = 0.0);
        self.reset_background();
    }

    fn clear_windows(&mut self) {
        self.fg_errors.clear();
        self.candidate_errors.clear();
        self.path_diffs.clear();
    }

    fn reset_background(&mut self) {
        self.background.iter_mut().for_each(|w| *w = ZERO);
        self.candidate.iter_mut().for_each(|w| *w = ZERO);
        self.error_power.iter_mut().for_each(|v| *v = 0.0);
        self.lr = LeakEstimator::new(self.cfg.num_bins());
        self.clear_windows();
        self.divergent_run = 0;
    }
}

/// Block PNLMS rule: `(1 - floor) * a_k / sum(a) + floor / M` for
/// per-partition activities `a_k`.
pub fn proportionate_scalings(activity: &[f64], floor: f64) -> Vec<f64> {
    let m = activity.len() as f64;
    let total: f64 = activity.iter().sum();
    if total <= 0.0 || !total.is_finite() {
        return vec![1.0 / m; activity.len()];
    }
    activity
        .iter()
        .map(|&a| (1.0 - floor) * a / total + floor / m)
        .collect()
}

fn block_energy(weights: &[Complex64], k: usize, bins: usize) -> f64 {
    weights[k * bins..(k + 1) * bins]
        .iter()
        .map(|w| w.norm_sqr())
        .sum()
}

fn energy(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum()
}

fn push_window(window: &mut VecDeque<f64>, value: f64, len: usize) {
    if window.len() == len {
        window.pop_front();
    }
    window.push_back(value);
}

/// Rounds the echo estimate to binary32 so that `near - echo` is exact in
/// f64 for binary32 `near`; echo far below the resolution of `near` is
/// dropped for the same reason.
fn decomposable_echo(near: f64, echo: f64) -> f64 {
    let echo = f64::from(echo as f32);
    if echo.abs() < near.abs() * 2f64.powi(-28) {
        0.0
    } else {
        echo
    }
}

#[cfg(test)]
mod tests {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    use super::*;

    fn noise(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<f64> {
        (0..n)
            .map(|_| {
                let v: f64 = rng.sample(StandardNormal);
                f64::from((v * scale) as f32)
            })
            .collect()
    }

    #[test]
    fn default_config_covers_288_ms() {
        let cfg = MdfConfig::default();
        assert_eq!(cfg.tail_samples(), 4608);
        assert_eq!(cfg.fft_size(), 512);
        cfg.validate().unwrap();
    }

    #[test]
    fn invalid_configs_are_rejected() {
        for cfg in [
            MdfConfig {
                base_step: 0.0,
                ..Default::default()
            },
            MdfConfig {
                base_step: 1.5,
                ..Default::default()
            },
            MdfConfig {
                num_blocks: 0,
                ..Default::default()
            },
            MdfConfig {
                promotion_margin: 1.0,
                ..Default::default()
            },
        ] {
            assert!(MdfFilter::new(cfg).is_err());
        }
    }

    #[test]
    fn zero_far_end_passes_near_through() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut f = MdfFilter::new(MdfConfig::default()).unwrap();
        for _ in 0..50 {
            let near = noise(&mut rng, 256, 0.1);
            let out = f.process_block(&[0.0; 256], &near).unwrap();
            assert!(out.echo.iter().all(|&v| v == 0.0));
            assert_eq!(out.error, near);
        }
    }

    #[test]
    fn non_finite_block_leaves_state_untouched() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut f = MdfFilter::new(MdfConfig::default()).unwrap();
        for _ in 0..20 {
            let x = noise(&mut rng, 256, 0.1);
            let d: Vec<f64> = x.iter().map(|v| 0.5 * v).collect();
            f.process_block(&x, &d).unwrap();
        }
        let before = (f.background.clone(), f.foreground.clone(), f.iteration);
        let mut bad = noise(&mut rng, 256, 0.1);
        bad[7] = f64::NAN;
        assert!(f.process_block(&bad, &[0.0; 256]).is_err());
        assert!(f.process_block(&[0.0; 256], &bad).is_err());
        assert!(f.process_block(&[0.0; 10], &[0.0; 10]).is_err());
        assert_eq!(
            (f.background.clone(), f.foreground.clone(), f.iteration),
            before
        );
    }

    #[test]
    fn constraint_is_an_idempotent_projection() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut f = MdfFilter::new(MdfConfig::default()).unwrap();
        for _ in 0..10 {
            let mut block: Vec<Complex64> = (0..257)
                .map(|_| Complex64::new(rng.sample(StandardNormal), rng.sample(StandardNormal)))
                .collect();
            block[0].im = 0.0;
            block[256].im = 0.0;
            let once = f.constrain_block(&block);
            let twice = f.constrain_block(&once);
            for (a, b) in once.iter().zip(&twice) {
                assert!((a - b).norm() < 1e-9, "{a} vs {b}");
            }
            // Tail of the time-domain response is zero.
            let mut spec = once.clone();
            let mut time = vec![0.0; 512];
            let mut scratch = vec![ZERO; f.inverse.get_scratch_len()];
            f.inverse
                .process_with_scratch(&mut spec, &mut time, &mut scratch)
                .unwrap();
            assert!(time[256..].iter().all(|v| v.abs() < 1e-9));
        }
    }

    #[test]
    fn proportionate_rule_cases() {
        let equal = proportionate_scalings(&[2.0; 18], 0.5);
        assert!(equal.iter().all(|&g| (g - 1.0 / 18.0).abs() < 1e-15));

        let mut one = vec![0.0; 18];
        one[4] = 7.0;
        let g = proportionate_scalings(&one, 0.5);
        let floor = 0.5 / 18.0;
        assert!((g[4] - (0.5 + floor)).abs() < 1e-15);
        for (k, &v) in g.iter().enumerate() {
            if k != 4 {
                assert_eq!(v, floor);
            }
        }
        assert_eq!(
            proportionate_scalings(&[0.0; 18], 0.5),
            vec![1.0 / 18.0; 18]
        );
    }

    #[test]
    fn proportionate_rule_matches_direct_formula() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..50 {
            let e: Vec<f64> = (0..18).map(|_| rng.random::<f64>() * 10.0).collect();
            let floor = rng.random::<f64>();
            let g = proportionate_scalings(&e, floor);
            let total: f64 = e.iter().sum();
            for k in 0..18 {
                let direct = (1.0 - floor) * (e[k] / total) + floor * (1.0 / 18.0);
                assert!((g[k] - direct).abs() < 1e-15);
            }
            assert!((g.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert!(g.iter().all(|&v| v >= floor / 18.0 - 1e-18));
        }
    }

    #[test]
    fn learning_rate_is_zero_without_near_energy() {
        let f = MdfFilter::new(MdfConfig::default()).unwrap();
        assert_eq!(f.learning_rate_control(0.0, 1.0), 0.0);
    }

    #[test]
    fn two_path_promotion_rules() {
        let mut f = MdfFilter::new(MdfConfig::default()).unwrap();
        let n = f.cfg.compare_blocks;
        f.candidate[3] = Complex64::new(1.0, 0.0);
        // Equal errors: no promotion.
        for _ in 0..n {
            f.record_path_errors(1.0, 1.0, 0.1);
        }
        assert!(!f.two_path_control());
        assert_eq!(f.foreground[3], ZERO);
        // Better by less than the margin.
        for _ in 0..n {
            f.record_path_errors(1.0, 0.95, 0.05);
        }
        assert!(!f.two_path_control());
        // Better by the margin, but the change is mostly not echo.
        for _ in 0..n {
            f.record_path_errors(1.0, 0.8, 0.5);
        }
        assert!(!f.two_path_control());
        // A partial window never promotes.
        for _ in 0..n - 1 {
            f.record_path_errors(1.0, 0.2, 0.8);
        }
        f.clear_windows();
        for _ in 0..n - 1 {
            f.record_path_errors(1.0, 0.2, 0.8);
        }
        assert!(!f.two_path_control());
        // Echo removed cleanly over the full window.
        f.record_path_errors(1.0, 0.2, 0.8);
        assert!(f.two_path_control());
        assert_eq!(f.foreground[3], Complex64::new(1.0, 0.0));
    }

    #[test]
    fn constraint_schedule_rotates() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut f = MdfFilter::new(MdfConfig::default()).unwrap();
        let mut constrained_seen = Vec::new();
        for t in 0..60 {
            let x = noise(&mut rng, 256, 0.1);
            let d: Vec<f64> = x.iter().map(|v| 0.5 * v).collect();
            f.process_block(&x, &d).unwrap();
            let [strongest, rotating] = f.last_constrained();
            assert_ne!(strongest, rotating);
            let expected = t % 18;
            if expected != strongest {
                assert_eq!(rotating, expected);
            }
            constrained_seen.extend([strongest, rotating]);
        }
        let mut distinct = constrained_seen.clone();
        distinct.sort_unstable();
        distinct.dedup();
        assert_eq!(distinct.len(), 18);
    }
}
