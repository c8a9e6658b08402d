//! Seeded synthetic sources, room impulse responses and convolution.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::StandardNormal;
use realfft::RealFftPlanner;

use crate::error::{Error, Result};
use crate::signal::{Waveform, SAMPLE_RATE};

const FS: f64 = SAMPLE_RATE as f64;

/// Room impulse response; non-empty with finite taps.
#[derive(Clone, Debug, PartialEq)]
pub struct Rir {
    taps: Vec<f64>,
}

impl Rir {
    pub fn new(taps: Vec<f64>) -> Result<Self> {
        if taps.is_empty() {
            return Err(Error::InvalidInput("impulse response is empty".into()));
        }
        crate::signal::check_finite(&taps)?;
        Ok(Self { taps })
    }

    /// `gain * delta(n - delay)`.
    pub fn delayed_impulse(delay: usize, gain: f64) -> Self {
        let mut taps = vec![0.0; delay + 1];
        taps[delay] = gain;
        Self { taps }
    }

    pub fn taps(&self) -> &[f64] {
        &self.taps
    }

    pub fn len(&self) -> usize {
        self.taps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.taps.is_empty()
    }

    /// Index of the largest-magnitude tap.
    pub fn direct_path(&self) -> usize {
        self.taps
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.abs().total_cmp(&b.1.abs()))
            .map_or(0, |(i, _)| i)
    }

    /// Same response with the tail cut at `len` taps.
    pub fn truncated(&self, len: usize) -> Self {
        Self {
            taps: self.taps[..len.clamp(1, self.taps.len())].to_vec(),
        }
    }
}

/// Exponentially decaying noise tail behind a unit direct path.
pub fn generate_rir<R: Rng>(
    rng: &mut R,
    len: usize,
    direct_delay: usize,
    rt60_secs: f64,
    tail_gain: f64,
) -> Result<Rir> {
    if direct_delay >= len {
        return Err(Error::InvalidInput(format!(
            "direct path at {direct_delay} does not fit in {len} taps"
        )));
    }
    if rt60_secs <= 0.0 {
        return Err(Error::InvalidInput("RT60 must be positive".into()));
    }
    // Amplitude falls by 60 dB (factor 1000) over rt60.
    let decay = 1000f64.ln() / (rt60_secs * FS);
    let mut taps = vec![0.0; len];
    taps[direct_delay] = 1.0;
    for (n, t) in taps.iter_mut().enumerate().skip(direct_delay + 1) {
        let g: f64 = rng.sample(StandardNormal);
        *t = tail_gain * g * (-decay * (n - direct_delay) as f64).exp();
    }
    Rir::new(taps)
}

/// White Gaussian noise with the given RMS.
pub fn white_noise<R: Rng>(rng: &mut R, len: usize, rms: f64) -> Waveform {
    let samples = (0..len)
        .map(|_| rms * rng.sample::<f64, _>(StandardNormal))
        .collect();
    Waveform::new(samples).expect("gaussian samples are finite")
}

/// Stationary low-pass tilted noise, a stand-in for ambient background.
pub fn ambient_noise<R: Rng>(rng: &mut R, len: usize, rms: f64) -> Waveform {
    let (mut lp1, mut lp2) = (0.0, 0.0);
    let raw: Vec<f64> = (0..len)
        .map(|_| {
            let g: f64 = rng.sample(StandardNormal);
            lp1 = 0.97 * lp1 + 0.03 * g;
            lp2 = 0.6 * lp2 + 0.4 * g;
            8.0 * lp1 + 0.5 * lp2
        })
        .collect();
    normalize_rms(raw, rms)
}

/// Two-pole resonator `y[n] = x[n] + 2 r cos(w) y[n-1] - r^2 y[n-2]`.
struct Resonator {
    a1: f64,
    a2: f64,
    gain: f64,
    y1: f64,
    y2: f64,
}

impl Resonator {
    fn new(freq: f64, bandwidth: f64) -> Self {
        let r = (-PI * bandwidth / FS).exp();
        let w = 2.0 * PI * freq / FS;
        Self {
            a1: 2.0 * r * w.cos(),
            a2: -r * r,
            gain: 1.0 - r,
            y1: 0.0,
            y2: 0.0,
        }
    }

    fn step(&mut self, x: f64) -> f64 {
        let y = self.gain * x + self.a1 * self.y1 + self.a2 * self.y2;
        self.y2 = self.y1;
        self.y1 = y;
        y
    }
}

/// Speech-like test signal: voiced syllables (glottal pulse train through
/// three formant resonators, with aspiration noise) under a syllabic
/// envelope, separated by short pauses.
pub fn speech_shaped<R: Rng>(rng: &mut R, len: usize, rms: f64) -> Waveform {
    let mut out = vec![0.0; len];
    let mut pos = rng.random_range(0..(FS * 0.05) as usize);
    while pos < len {
        let syllable = (rng.random_range(0.12..0.35) * FS) as usize;
        let f0_start = rng.random_range(90.0..240.0);
        let f0_end = f0_start * rng.random_range(0.8..1.2);
        let formants = [
            rng.random_range(300.0..900.0),
            rng.random_range(900.0..2500.0),
            rng.random_range(2400.0..3600.0),
        ];
        let weights = [1.0, rng.random_range(0.3..0.8), rng.random_range(0.1..0.4)];
        let mut res: Vec<Resonator> = formants
            .iter()
            .map(|&f| Resonator::new(f, rng.random_range(60.0..160.0)))
            .collect();
        let level = rng.random_range(0.3..1.0);
        let mut phase = 0.0;
        for i in 0..syllable.min(len - pos) {
            let frac = i as f64 / syllable as f64;
            let f0 = f0_start + (f0_end - f0_start) * frac;
            phase += f0 / FS;
            let pulse = if phase >= 1.0 {
                phase -= 1.0;
                1.0
            } else {
                0.0
            };
            let breath: f64 = rng.sample::<f64, _>(StandardNormal) * 0.02;
            let excitation = pulse + breath;
            let voiced: f64 = res
                .iter_mut()
                .zip(&weights)
                .map(|(r, w)| w * r.step(excitation))
                .sum();
            let env = (PI * frac).sin().powf(0.7);
            out[pos + i] = level * env * voiced;
        }
        pos += syllable;
        let pause = if rng.random_bool(0.15) {
            rng.random_range(0.3..0.8)
        } else {
            rng.random_range(0.03..0.2)
        };
        pos += (pause * FS) as usize;
    }
    normalize_rms(out, rms)
}

fn normalize_rms(mut samples: Vec<f64>, rms: f64) -> Waveform {
    let ms = samples.iter().map(|v| v * v).sum::<f64>() / samples.len().max(1) as f64;
    if ms > 0.0 {
        let g = rms / ms.sqrt();
        samples.iter_mut().for_each(|v| *v *= g);
    }
    Waveform::new(samples).expect("finite synthetic samples")
}

/// Causal linear convolution of `x` with `h`, truncated to `x.len()`.
pub fn convolve(x: &[f64], h: &[f64]) -> Vec<f64> {
    if x.is_empty() || h.is_empty() {
        return vec![0.0; x.len()];
    }
    let n = (x.len() + h.len() - 1).next_power_of_two();
    let mut planner = RealFftPlanner::<f64>::new();
    let fwd = planner.plan_fft_forward(n);
    let inv = planner.plan_fft_inverse(n);
    let mut xa = vec![0.0; n];
    xa[..x.len()].copy_from_slice(x);
    let mut ha = vec![0.0; n];
    ha[..h.len()].copy_from_slice(h);
    let mut xs = fwd.make_output_vec();
    let mut hs = fwd.make_output_vec();
    fwd.process(&mut xa, &mut xs).expect("sizes match plan");
    fwd.process(&mut ha, &mut hs).expect("sizes match plan");
    for (a, b) in xs.iter_mut().zip(&hs) {
        *a *= b;
    }
    let last = xs.len() - 1;
    xs[0].im = 0.0;
    xs[last].im = 0.0;
    inv.process(&mut xs, &mut xa).expect("sizes match plan");
    let scale = 1.0 / n as f64;
    xa.truncate(x.len());
    xa.iter_mut().for_each(|v| *v *= scale);
    xa
}

/// Echo of far-end `x` through `rir`: `y = rir * x`, truncated to `len(x)`.
pub fn synthesize_echo(x: &Waveform, rir: &Rir) -> Waveform {
    Waveform::new(convolve(x.samples(), rir.taps())).expect("convolution of finite inputs")
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;

    fn naive(x: &[f64], h: &[f64]) -> Vec<f64> {
        (0..x.len())
            .map(|n| (0..h.len().min(n + 1)).map(|k| h[k] * x[n - k]).sum())
            .collect()
    }

    #[test]
    fn convolution_matches_direct_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for (nx, nh) in [(1, 1), (100, 7), (1000, 300), (257, 512)] {
            let x: Vec<f64> = (0..nx).map(|_| rng.random_range(-1.0..1.0)).collect();
            let h: Vec<f64> = (0..nh).map(|_| rng.random_range(-1.0..1.0)).collect();
            let fast = convolve(&x, &h);
            for (a, b) in fast.iter().zip(naive(&x, &h)) {
                assert!((a - b).abs() < 1e-9, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn unit_and_delayed_impulses() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = white_noise(&mut rng, 2000, 0.3);
        let y = synthesize_echo(&x, &Rir::delayed_impulse(0, 1.0));
        for (a, b) in y.samples().iter().zip(x.samples()) {
            assert!((a - b).abs() < 1e-12);
        }
        let y = synthesize_echo(&x, &Rir::delayed_impulse(100, 0.5));
        for n in 0..2000 {
            let expected = if n >= 100 {
                0.5 * x.samples()[n - 100]
            } else {
                0.0
            };
            assert!((y.samples()[n] - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn rir_shape() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let rir = generate_rir(&mut rng, 4608, 40, 0.3, 0.3).unwrap();
        assert_eq!(rir.len(), 4608);
        assert_eq!(rir.direct_path(), 40);
        assert!(rir.taps()[..40].iter().all(|&t| t == 0.0));
        let head: f64 = rir.taps()[41..841].iter().map(|t| t * t).sum();
        let tail: f64 = rir.taps()[3800..4600].iter().map(|t| t * t).sum();
        assert!(head > 1e3 * tail);
        assert!(generate_rir(&mut rng, 10, 10, 0.3, 0.3).is_err());
        assert!(Rir::new(vec![]).is_err());
        assert!(Rir::new(vec![f64::NAN]).is_err());
    }

    #[test]
    fn sources_hit_requested_level() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for wave in [
            speech_shaped(&mut rng, 32000, 0.1),
            ambient_noise(&mut rng, 32000, 0.1),
            white_noise(&mut rng, 320_000, 0.1),
        ] {
            assert!((wave.mean_square().sqrt() - 0.1).abs() < 1e-3);
        }
    }

    #[test]
    fn speech_has_pauses() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let s = speech_shaped(&mut rng, 160_000, 0.1);
        let frames: Vec<f64> = s
            .samples()
            .chunks(160)
            .map(|c| c.iter().map(|v| v * v).sum())
            .collect();
        let silent = frames.iter().filter(|&&e| e < 1e-10).count();
        assert!(silent > frames.len() / 20, "{silent} of {}", frames.len());
        assert!(silent < frames.len() / 2);
    }
}
