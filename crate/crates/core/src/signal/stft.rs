use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use num_complex::Complex64;
use realfft::{ComplexToReal, RealFftPlanner, RealToComplex};

use super::{check_finite, Waveform};
use crate::error::{Error, Result};

pub const FFT_SIZE: usize = 512;
pub const HOP: usize = 256;
pub const NUM_BINS: usize = FFT_SIZE / 2 + 1;

/// Periodic Hann window of length `len`.
pub fn hann_periodic(len: usize) -> Vec<f64> {
    (0..len)
        .map(|n| 0.5 - 0.5 * (2.0 * PI * n as f64 / len as f64).cos())
        .collect()
}

/// Framing parameters. The hop is always half the transform size so the
/// periodic Hann window overlap-adds to a constant.
#[derive(Clone, Debug, PartialEq)]
pub struct StftConfig {
    fft_size: usize,
    hop: usize,
    window: Vec<f64>,
}

impl Default for StftConfig {
    fn default() -> Self {
        Self::new(FFT_SIZE).expect("default transform size is valid")
    }
}

impl StftConfig {
    pub fn new(fft_size: usize) -> Result<Self> {
        if fft_size < 2 || !fft_size.is_multiple_of(2) {
            return Err(Error::Config(format!(
                "transform size must be even and at least 2, got {fft_size}"
            )));
        }
        Ok(Self {
            fft_size,
            hop: fft_size / 2,
            window: hann_periodic(fft_size),
        })
    }

    pub fn fft_size(&self) -> usize {
        self.fft_size
    }

    pub fn hop(&self) -> usize {
        self.hop
    }

    pub fn num_bins(&self) -> usize {
        self.fft_size / 2 + 1
    }

    pub fn window(&self) -> &[f64] {
        &self.window
    }

    /// Constant value of the overlapped window sum; dividing by it makes
    /// analysis followed by synthesis the identity.
    pub fn ola_gain(&self) -> f64 {
        self.window.iter().sum::<f64>() / self.hop as f64
    }

    /// Number of frames produced for `len` input samples. The last frame is
    /// zero-padded when the input does not end on a hop boundary.
    pub fn num_frames(&self, len: usize) -> usize {
        if len == 0 {
            0
        } else if len <= self.fft_size {
            1
        } else {
            1 + (len - self.fft_size).div_ceil(self.hop)
        }
    }
}

/// One half-spectrum of a windowed frame.
#[derive(Clone, Debug, PartialEq)]
pub struct SpectralFrame {
    pub index: usize,
    pub bins: Vec<Complex64>,
}

impl SpectralFrame {
    pub fn zeros(index: usize, num_bins: usize) -> Self {
        Self {
            index,
            bins: vec![Complex64::new(0.0, 0.0); num_bins],
        }
    }

    /// Time-domain energy of the windowed segment, recovered from the
    /// half-spectrum by Parseval's relation.
    pub fn energy(&self) -> f64 {
        let n = self.bins.len();
        if n < 2 {
            return self.bins.iter().map(|b| b.norm_sqr()).sum();
        }
        let fft_size = 2 * (n - 1);
        let edges = self.bins[0].norm_sqr() + self.bins[n - 1].norm_sqr();
        let inner: f64 = self.bins[1..n - 1].iter().map(|b| b.norm_sqr()).sum();
        (edges + 2.0 * inner) / fft_size as f64
    }

    pub fn is_finite(&self) -> bool {
        self.bins
            .iter()
            .all(|b| b.re.is_finite() && b.im.is_finite())
    }
}

/// Planned forward/inverse transforms with reusable buffers.
///
/// The forward transform is unnormalized; the inverse scales by `1/N`.
pub struct Stft {
    cfg: StftConfig,
    forward: Arc<dyn RealToComplex<f64>>,
    inverse: Arc<dyn ComplexToReal<f64>>,
    time_buf: Vec<f64>,
    freq_buf: Vec<Complex64>,
    scratch: Vec<Complex64>,
}

impl fmt::Debug for Stft {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Stft").field("cfg", &self.cfg).finish()
    }
}

impl Clone for Stft {
    fn clone(&self) -> Self {
        Self::new(self.cfg.clone())
    }
}

impl Stft {
    pub fn new(cfg: StftConfig) -> Self {
        let mut planner = RealFftPlanner::<f64>::new();
        let forward = planner.plan_fft_forward(cfg.fft_size);
        let inverse = planner.plan_fft_inverse(cfg.fft_size);
        let scratch_len = forward.get_scratch_len().max(inverse.get_scratch_len());
        Self {
            time_buf: vec![0.0; cfg.fft_size],
            freq_buf: vec![Complex64::new(0.0, 0.0); cfg.num_bins()],
            scratch: vec![Complex64::new(0.0, 0.0); scratch_len],
            forward,
            inverse,
            cfg,
        }
    }

    pub fn config(&self) -> &StftConfig {
        &self.cfg
    }

    /// Windows `segment` (zero-padded to the transform size) and transforms it.
    pub fn analyze(&mut self, segment: &[f64], index: usize) -> SpectralFrame {
        debug_assert!(segment.len() <= self.cfg.fft_size);
        for (i, slot) in self.time_buf.iter_mut().enumerate() {
            let x = segment.get(i).copied().unwrap_or(0.0);
            *slot = x * self.cfg.window[i];
        }
        self.forward
            .process_with_scratch(&mut self.time_buf, &mut self.freq_buf, &mut self.scratch)
            .expect("buffer sizes match the plan");
        SpectralFrame {
            index,
            bins: self.freq_buf.clone(),
        }
    }

    /// Inverse transform of one frame into `out` (length `fft_size`).
    ///
    /// Imaginary parts of the DC and Nyquist bins do not exist for a real
    /// signal and are ignored.
    pub fn synthesize(&mut self, frame: &SpectralFrame, out: &mut [f64]) -> Result<()> {
        if frame.bins.len() != self.cfg.num_bins() {
            return Err(Error::InvalidInput(format!(
                "frame {} has {} bins, expected {}",
                frame.index,
                frame.bins.len(),
                self.cfg.num_bins()
            )));
        }
        self.freq_buf.copy_from_slice(&frame.bins);
        let last = self.freq_buf.len() - 1;
        self.freq_buf[0].im = 0.0;
        self.freq_buf[last].im = 0.0;
        self.inverse
            .process_with_scratch(&mut self.freq_buf, out, &mut self.scratch)
            .expect("buffer sizes match the plan");
        let scale = 1.0 / self.cfg.fft_size as f64;
        out.iter_mut().for_each(|v| *v *= scale);
        Ok(())
    }

    /// Frames `x`; frame `t` covers samples `[t*hop, t*hop + fft_size)`.
    pub fn forward(&mut self, x: &[f64]) -> Result<Vec<SpectralFrame>> {
        check_finite(x)?;
        let hop = self.cfg.hop;
        let n = self.cfg.fft_size;
        let frames = (0..self.cfg.num_frames(x.len()))
            .map(|t| {
                let start = t * hop;
                let end = (start + n).min(x.len());
                self.analyze(&x[start..end], t)
            })
            .collect();
        Ok(frames)
    }

    /// Overlap-adds the inverse transforms of `frames`. The output has
    /// `(frames - 1) * hop + fft_size` samples.
    pub fn inverse(&mut self, frames: &[SpectralFrame]) -> Result<Waveform> {
        if frames.is_empty() {
            return Ok(Waveform::default());
        }
        let hop = self.cfg.hop;
        let n = self.cfg.fft_size;
        let gain = self.cfg.ola_gain();
        let mut out = vec![0.0; (frames.len() - 1) * hop + n];
        let mut buf = vec![0.0; n];
        for (t, frame) in frames.iter().enumerate() {
            if !frame.is_finite() {
                return Err(Error::InvalidInput(format!(
                    "frame {} has non-finite bins",
                    frame.index
                )));
            }
            self.synthesize(frame, &mut buf)?;
            for (o, &v) in out[t * hop..t * hop + n].iter_mut().zip(&buf) {
                *o += v / gain;
            }
        }
        Waveform::new(out)
    }
}

/// Short-time spectra of `x` under `cfg`.
pub fn stft(x: &[f64], cfg: &StftConfig) -> Result<Vec<SpectralFrame>> {
    Stft::new(cfg.clone()).forward(x)
}

/// Overlap-add resynthesis of `frames`.
pub fn istft_overlap_add(frames: &[SpectralFrame], cfg: &StftConfig) -> Result<Waveform> {
    Stft::new(cfg.clone()).inverse(frames)
}

/// Frame-at-a-time analysis. Each pushed hop yields the frame ending at that
/// hop, once a full window of input is available; frame indices agree with
/// [`stft`].
#[derive(Clone, Debug)]
pub struct StreamingStft {
    stft: Stft,
    carry: Vec<f64>,
    hops_seen: usize,
}

impl StreamingStft {
    pub fn new(cfg: StftConfig) -> Self {
        Self {
            carry: Vec::with_capacity(cfg.fft_size),
            stft: Stft::new(cfg),
            hops_seen: 0,
        }
    }

    pub fn push(&mut self, hop: &[f64]) -> Option<SpectralFrame> {
        let hop_len = self.stft.cfg.hop;
        assert_eq!(hop.len(), hop_len, "streaming analysis takes whole hops");
        self.carry.extend_from_slice(hop);
        self.hops_seen += 1;
        if self.carry.len() < self.stft.cfg.fft_size {
            return None;
        }
        let frame = self.stft.analyze(&self.carry, self.hops_seen - 2);
        self.carry.drain(..hop_len);
        Some(frame)
    }
}

/// Frame-at-a-time overlap-add synthesis.
#[derive(Clone, Debug)]
pub struct OverlapAdd {
    stft: Stft,
    accum: Vec<f64>,
    frame_buf: Vec<f64>,
}

impl OverlapAdd {
    pub fn new(cfg: StftConfig) -> Self {
        Self {
            accum: vec![0.0; cfg.fft_size],
            frame_buf: vec![0.0; cfg.fft_size],
            stft: Stft::new(cfg),
        }
    }

    /// Adds one frame and returns the hop of output it completes.
    pub fn push(&mut self, frame: &SpectralFrame) -> Result<Vec<f64>> {
        let hop = self.stft.cfg.hop;
        let gain = self.stft.cfg.ola_gain();
        self.stft.synthesize(frame, &mut self.frame_buf)?;
        for (a, &v) in self.accum.iter_mut().zip(&self.frame_buf) {
            *a += v / gain;
        }
        let done = self.accum[..hop].to_vec();
        self.accum.copy_within(hop.., 0);
        let n = self.accum.len();
        self.accum[n - hop..].iter_mut().for_each(|a| *a = 0.0);
        Ok(done)
    }

    /// Drains the tail of the last frame.
    pub fn finish(&mut self) -> Vec<f64> {
        let hop = self.stft.cfg.hop;
        let tail = self.accum[..self.accum.len() - hop].to_vec();
        self.accum.iter_mut().for_each(|a| *a = 0.0);
        tail
    }
}
