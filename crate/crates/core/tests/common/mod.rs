#![allow(dead_code)]

use aecns::mdf::{MdfConfig, MdfFilter};
use aecns::scene::{generate_rir, speech_shaped, synthesize_echo, white_noise, Rir};
use aecns::Waveform;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const FS: usize = 16_000;
pub const BLOCK: usize = 256;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Far {
    White,
    Speech,
}

/// Far-end single talk: `d = rir * x` with no near speech or noise.
pub struct SingleTalk {
    pub x: Waveform,
    pub d: Waveform,
    pub rir: Rir,
}

/// Random 288 ms echo path with RT60 in 0.1..0.5 s.
pub fn random_echo_path(rng: &mut ChaCha8Rng) -> Rir {
    let direct = rng.random_range(16..160);
    let rt60 = rng.random_range(0.1..0.5);
    generate_rir(rng, 4608, direct, rt60, 0.3).unwrap()
}

pub fn single_talk(seed: u64, far: Far, secs: f64) -> SingleTalk {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = (secs * FS as f64) as usize;
    let x = match far {
        Far::White => white_noise(&mut rng, n, 0.1),
        Far::Speech => speech_shaped(&mut rng, n, 0.1),
    };
    let rir = random_echo_path(&mut rng);
    let d = synthesize_echo(&x, &rir);
    SingleTalk { x, d, rir }
}

/// Runs a default filter block by block; returns the error signal.
pub fn run_filter(x: &[f64], d: &[f64]) -> Vec<f64> {
    run_filter_with(&mut MdfFilter::new(MdfConfig::default()).unwrap(), x, d)
}

pub fn run_filter_with(f: &mut MdfFilter, x: &[f64], d: &[f64]) -> Vec<f64> {
    let mut e = Vec::with_capacity(d.len());
    for (xb, db) in x.chunks_exact(BLOCK).zip(d.chunks_exact(BLOCK)) {
        e.extend(f.process_block(xb, db).unwrap().error);
    }
    e
}

/// Energy ratio in dB of `d` over `e` on `range`.
pub fn erle_on(d: &[f64], e: &[f64], range: std::ops::Range<usize>) -> f64 {
    aecns::signal::erle(&d[range.clone()], &e[range]).unwrap()
}

pub fn complex_noise(rng: &mut ChaCha8Rng, bins: usize, scale: f64) -> Vec<num_complex::Complex64> {
    (0..bins)
        .map(|_| {
            num_complex::Complex64::new(
                rng.random_range(-scale..scale),
                rng.random_range(-scale..scale),
            )
        })
        .collect()
}
