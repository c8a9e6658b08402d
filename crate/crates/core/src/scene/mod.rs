//! Synthetic near-end / far-end scenes with exact ground truth.
//!
//! A scene follows the microphone model `d = s_rev + y + w` where
//! `s_rev = h_near * s` is reverberant near-end speech, `y = h_echo * x(n - D)`
//! is the echo of the far-end reference delayed by `D`, and `w` is noise.
//! Mixing follows four steps: reverberate and add noise at the drawn SNR,
//! scale the echo to the drawn SER, then independently silence the noise and
//! the echo (together with its far-end reference).

mod synth;

use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use synth::{
    ambient_noise, convolve, generate_rir, speech_shaped, synthesize_echo, white_noise, Rir,
};

use crate::error::{Error, Result};
use crate::signal::wav::{read_wav, write_wav};
use crate::signal::{Waveform, SAMPLE_RATE};

const FS: f64 = SAMPLE_RATE as f64;

/// Kind of far-end source the generator plays.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FarSource {
    Speech,
    WhiteNoise,
}

/// Generative description of a scene. Ranges are inclusive `[min, max]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneSpec {
    pub duration_secs: f64,
    pub snr_db: [f64; 2],
    pub ser_db: [f64; 2],
    pub noise_silence_prob: f64,
    pub echo_silence_prob: f64,
    pub far_delay_ms: [f64; 2],
    /// Echo-path reverberation time.
    pub echo_rt60_secs: [f64; 2],
    /// Near-end room reverberation time.
    pub near_rt60_secs: [f64; 2],
    pub echo_rir_taps: usize,
    pub near_rir_taps: usize,
    /// Loudspeaker-to-microphone direct path, in samples.
    pub echo_direct_delay: [usize; 2],
    pub far_source: FarSource,
    /// Level of the dry near-end source before reverberation.
    pub near_rms: f64,
    pub far_rms: f64,
    pub seed: u64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self {
            duration_secs: 10.0,
            snr_db: [5.0, 25.0],
            ser_db: [-5.0, 20.0],
            noise_silence_prob: 0.2,
            echo_silence_prob: 0.2,
            far_delay_ms: [0.0, 1000.0],
            echo_rt60_secs: [0.1, 0.5],
            near_rt60_secs: [0.1, 0.4],
            echo_rir_taps: 4608,
            near_rir_taps: 4096,
            echo_direct_delay: [16, 160],
            far_source: FarSource::Speech,
            near_rms: 0.05,
            far_rms: 0.05,
            seed: 0,
        }
    }
}

/// Concrete values drawn from a [`SceneSpec`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneParams {
    pub num_samples: usize,
    pub snr_db: f64,
    pub ser_db: f64,
    pub noise_silent: bool,
    pub echo_silent: bool,
    pub far_delay_samples: usize,
    pub echo_rt60_secs: f64,
    pub near_rt60_secs: f64,
    pub echo_direct_delay: usize,
    pub seed: u64,
}

fn uniform<R: Rng>(rng: &mut R, [lo, hi]: [f64; 2]) -> f64 {
    if hi > lo {
        rng.random_range(lo..=hi)
    } else {
        lo
    }
}

impl SceneSpec {
    pub fn from_toml(text: &str) -> Result<Self> {
        let spec: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scene spec serializes")
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        Self {
            seed,
            ..self.clone()
        }
    }

    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if !(self.duration_secs > 0.0) {
            return bad("duration must be positive");
        }
        for [lo, hi] in [
            self.snr_db,
            self.ser_db,
            self.far_delay_ms,
            self.echo_rt60_secs,
            self.near_rt60_secs,
        ] {
            if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
                return bad("ranges must be finite with min <= max");
            }
        }
        if self.far_delay_ms[0] < 0.0
            || self.echo_rt60_secs[0] <= 0.0
            || self.near_rt60_secs[0] <= 0.0
        {
            return bad("delays must be non-negative and reverberation times positive");
        }
        if self.far_delay_ms[1] >= 1000.0 * self.duration_secs {
            return bad("far-end delay must be shorter than the scene");
        }
        for p in [self.noise_silence_prob, self.echo_silence_prob] {
            if !(0.0..=1.0).contains(&p) {
                return bad("silence probabilities must lie in [0, 1]");
            }
        }
        if self.echo_direct_delay[0] > self.echo_direct_delay[1]
            || self.echo_direct_delay[1] >= self.echo_rir_taps
        {
            return bad("echo direct path must fit inside the echo response");
        }
        if self.near_rir_taps == 0 || !(self.near_rms > 0.0) || !(self.far_rms > 0.0) {
            return bad("near response length and source levels must be positive");
        }
        Ok(())
    }

    /// Draws the concrete parameters of the scene for `self.seed`.
    pub fn draw(&self) -> SceneParams {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let [d0, d1] = self.echo_direct_delay;
        SceneParams {
            num_samples: (self.duration_secs * FS).round() as usize,
            snr_db: uniform(&mut rng, self.snr_db),
            ser_db: uniform(&mut rng, self.ser_db),
            noise_silent: rng.random_bool(self.noise_silence_prob),
            echo_silent: rng.random_bool(self.echo_silence_prob),
            far_delay_samples: (uniform(&mut rng, self.far_delay_ms) * FS / 1000.0).round()
                as usize,
            echo_rt60_secs: uniform(&mut rng, self.echo_rt60_secs),
            near_rt60_secs: uniform(&mut rng, self.near_rt60_secs),
            echo_direct_delay: rng.random_range(d0..=d1),
            seed: self.seed,
        }
    }

    /// Draws parameters, synthesizes sources and responses, and mixes.
    pub fn generate(&self) -> Result<Scene> {
        self.validate()?;
        let params = self.draw();
        // Source material uses a stream independent of the parameter draw.
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ 0x5eed_5eed_5eed_5eed);
        let n = params.num_samples;
        let s = speech_shaped(&mut rng, n, self.near_rms);
        let x = match self.far_source {
            FarSource::Speech => speech_shaped(&mut rng, n, self.far_rms),
            FarSource::WhiteNoise => white_noise(&mut rng, n, self.far_rms),
        };
        let w = ambient_noise(&mut rng, n, 0.01);
        let near_rir = generate_rir(&mut rng, self.near_rir_taps, 0, params.near_rt60_secs, 0.2)?;
        let echo_rir = generate_rir(
            &mut rng,
            self.echo_rir_taps,
            params.echo_direct_delay,
            params.echo_rt60_secs,
            0.3,
        )?;
        mix_scene(&params, &s, &w, &x, &near_rir, &echo_rir)
    }
}

/// A realized scene. `d == s_reverb + y + w` holds sample-wise.
#[derive(Clone, Debug, PartialEq)]
pub struct Scene {
    pub params: SceneParams,
    pub near_rir: Rir,
    pub echo_rir: Rir,
    /// Dry near-end speech.
    pub s: Waveform,
    /// Reverberant near-end speech, the enhancement target.
    pub s_reverb: Waveform,
    pub w: Waveform,
    /// Far-end reference as seen by the canceller.
    pub x: Waveform,
    pub y: Waveform,
    pub d: Waveform,
}

impl Scene {
    /// Reverberant speech over noise, in dB.
    pub fn measured_snr_db(&self) -> f64 {
        10.0 * (self.s_reverb.energy() / self.w.energy()).log10()
    }

    /// Reverberant speech over echo, in dB.
    pub fn measured_ser_db(&self) -> f64 {
        10.0 * (self.s_reverb.energy() / self.y.energy()).log10()
    }
}

fn delayed(x: &[f64], delay: usize) -> Vec<f64> {
    let mut out = vec![0.0; x.len()];
    if delay < x.len() {
        out[delay..].copy_from_slice(&x[..x.len() - delay]);
    }
    out
}

fn scaled(x: &[f64], g: f64) -> Vec<f64> {
    x.iter().map(|v| v * g).collect()
}

fn ensure_active(name: &str, energy: f64) -> Result<()> {
    if energy > 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidInput(format!(
            "{name} has zero energy; the mixing ratio is undefined"
        )))
    }
}

/// Mixes sources into a scene following `params`.
pub fn mix_scene(
    params: &SceneParams,
    s: &Waveform,
    w: &Waveform,
    x: &Waveform,
    near_rir: &Rir,
    echo_rir: &Rir,
) -> Result<Scene> {
    let n = params.num_samples;
    for (name, wave) in [("near speech", s), ("noise", w), ("far end", x)] {
        if wave.len() != n {
            return Err(Error::InvalidInput(format!(
                "{name} has {} samples, the scene needs {n}",
                wave.len()
            )));
        }
    }

    let s_reverb = convolve(s.samples(), near_rir.taps());
    let p_s: f64 = s_reverb.iter().map(|v| v * v).sum();
    ensure_active("reverberant near speech", p_s)?;

    let w = if params.noise_silent {
        vec![0.0; n]
    } else {
        ensure_active("noise", w.energy())?;
        let target = p_s / 10f64.powf(params.snr_db / 10.0);
        scaled(w.samples(), (target / w.energy()).sqrt())
    };

    let (x, y) = if params.echo_silent {
        (vec![0.0; n], vec![0.0; n])
    } else {
        let y0 = convolve(
            &delayed(x.samples(), params.far_delay_samples),
            echo_rir.taps(),
        );
        let p_y0: f64 = y0.iter().map(|v| v * v).sum();
        ensure_active("echo", p_y0)?;
        let target = p_s / 10f64.powf(params.ser_db / 10.0);
        let x = scaled(x.samples(), (target / p_y0).sqrt());
        let y = convolve(&delayed(&x, params.far_delay_samples), echo_rir.taps());
        (x, y)
    };

    let d: Vec<f64> = s_reverb
        .iter()
        .zip(&y)
        .zip(&w)
        .map(|((a, b), c)| a + b + c)
        .collect();

    Ok(Scene {
        params: params.clone(),
        near_rir: near_rir.clone(),
        echo_rir: echo_rir.clone(),
        s: s.clone(),
        s_reverb: Waveform::new(s_reverb)?,
        w: Waveform::new(w)?,
        x: Waveform::new(x)?,
        y: Waveform::new(y)?,
        d: Waveform::new(d)?,
    })
}

/// How [`adjust_length`] fills or cuts a source.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LengthMode {
    /// Cut at an offset or pad zeros at the end.
    Speech,
    /// Cut at an offset or repeat the signal from its start.
    Noise,
    /// Like speech; use [`adjust_echo_pair`] to cut two signals together.
    EchoPair,
}

/// Brings `src` to `target` samples. Longer sources are cut at `offset`
/// (clamped to the last valid start).
pub fn adjust_length_at(
    src: &Waveform,
    target: usize,
    mode: LengthMode,
    offset: usize,
) -> Waveform {
    let x = src.samples();
    if x.len() >= target {
        let start = offset.min(x.len() - target);
        return Waveform::new(x[start..start + target].to_vec()).expect("finite source");
    }
    let out = match mode {
        LengthMode::Speech | LengthMode::EchoPair => {
            let mut v = x.to_vec();
            v.resize(target, 0.0);
            v
        }
        LengthMode::Noise if x.is_empty() => vec![0.0; target],
        LengthMode::Noise => x.iter().copied().cycle().take(target).collect(),
    };
    Waveform::new(out).expect("finite source")
}

fn random_offset<R: Rng>(len: usize, target: usize, rng: &mut R) -> usize {
    if len > target {
        rng.random_range(0..=len - target)
    } else {
        0
    }
}

/// [`adjust_length_at`] with a uniformly drawn cut offset.
pub fn adjust_length<R: Rng>(
    src: &Waveform,
    target: usize,
    mode: LengthMode,
    rng: &mut R,
) -> Waveform {
    let offset = random_offset(src.len(), target, rng);
    adjust_length_at(src, target, mode, offset)
}

/// Cuts or pads an echo and its far-end reference with one shared offset.
pub fn adjust_echo_pair<R: Rng>(
    echo: &Waveform,
    far: &Waveform,
    target: usize,
    rng: &mut R,
) -> Result<(Waveform, Waveform)> {
    if echo.len() != far.len() {
        return Err(Error::LengthMismatch {
            left: echo.len(),
            right: far.len(),
        });
    }
    let offset = random_offset(echo.len(), target, rng);
    Ok((
        adjust_length_at(echo, target, LengthMode::EchoPair, offset),
        adjust_length_at(far, target, LengthMode::EchoPair, offset),
    ))
}

pub const MANIFEST_FILE: &str = "manifest.json";

/// Files of an exported scene, relative to the manifest.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneFiles {
    /// Reverberant near-end speech (enhancement target).
    pub target: String,
    pub far: String,
    pub mic: String,
    pub echo: Option<String>,
    pub noise: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneManifest {
    pub sample_rate: u32,
    pub num_samples: usize,
    pub files: SceneFiles,
    pub params: Option<SceneParams>,
}

/// Writes `s.wav`, `x.wav`, `d.wav`, `y.wav`, `w.wav` and the manifest.
pub fn export_scene(dir: impl AsRef<Path>, scene: &Scene) -> Result<PathBuf> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    let files = SceneFiles {
        target: "s.wav".into(),
        far: "x.wav".into(),
        mic: "d.wav".into(),
        echo: Some("y.wav".into()),
        noise: Some("w.wav".into()),
    };
    write_wav(dir.join(&files.target), &scene.s_reverb)?;
    write_wav(dir.join(&files.far), &scene.x)?;
    write_wav(dir.join(&files.mic), &scene.d)?;
    write_wav(dir.join("y.wav"), &scene.y)?;
    write_wav(dir.join("w.wav"), &scene.w)?;
    let manifest = SceneManifest {
        sample_rate: SAMPLE_RATE,
        num_samples: scene.d.len(),
        files,
        params: Some(scene.params.clone()),
    };
    let path = dir.join(MANIFEST_FILE);
    let text =
        serde_json::to_string_pretty(&manifest).map_err(|e| Error::InvalidInput(e.to_string()))?;
    fs::write(&path, text)?;
    Ok(path)
}

/// Ground truth read back from an exported scene directory. Missing
/// optional files are `None`.
#[derive(Clone, Debug, PartialEq)]
pub struct SceneTruth {
    pub manifest: SceneManifest,
    pub target: Option<Waveform>,
    pub far: Option<Waveform>,
    pub mic: Waveform,
    pub echo: Option<Waveform>,
    pub noise: Option<Waveform>,
}

pub fn load_scene_dir(dir: impl AsRef<Path>) -> Result<SceneTruth> {
    let dir = dir.as_ref();
    let text = fs::read_to_string(dir.join(MANIFEST_FILE))?;
    let manifest: SceneManifest = serde_json::from_str(&text)
        .map_err(|e| Error::InvalidInput(format!("scene manifest: {e}")))?;
    let optional = |name: &Option<String>| -> Result<Option<Waveform>> {
        match name {
            Some(n) if dir.join(n).exists() => Ok(Some(read_wav(dir.join(n))?)),
            _ => Ok(None),
        }
    };
    let target = optional(&Some(manifest.files.target.clone()))?;
    let far = optional(&Some(manifest.files.far.clone()))?;
    let echo = optional(&manifest.files.echo)?;
    let noise = optional(&manifest.files.noise)?;
    let mic = read_wav(dir.join(&manifest.files.mic))?;
    Ok(SceneTruth {
        manifest,
        target,
        far,
        mic,
        echo,
        noise,
    })
}
