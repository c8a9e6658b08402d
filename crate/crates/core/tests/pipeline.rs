mod common;

use std::sync::Arc;

use aecns::model::{Mctcn, ModelConfig, ModelWeights};
use aecns::pipeline::{enhance_with, Bypass, Session, SessionConfig};
use aecns::scene::{ambient_noise, speech_shaped, synthesize_echo, white_noise};
use aecns::Waveform;
use common::{erle_on, random_echo_path, single_talk, Far, FS};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn tiny_model() -> (ModelConfig, Arc<Mctcn>) {
    let cfg = ModelConfig {
        d_model: 16,
        d_f: 8,
        kernel: 3,
        num_blocks: 3,
        max_dilation: 4,
        bins: 257,
    };
    let model = Mctcn::new(&ModelWeights::random(&cfg, 90).unwrap(), cfg.clone()).unwrap();
    (cfg, Arc::new(model))
}

fn with_network() -> Session {
    let (model_cfg, model) = tiny_model();
    let cfg = SessionConfig {
        model: model_cfg,
        ..Default::default()
    };
    Session::new(cfg, Some(model)).unwrap()
}

fn no_network(bypass_delay: bool) -> Session {
    let cfg = SessionConfig {
        bypass: Bypass {
            network: true,
            delay: bypass_delay,
            ..Default::default()
        },
        ..Default::default()
    };
    Session::new(cfg, None).unwrap()
}

fn mixture(seed: u64, secs: f64) -> (Waveform, Waveform) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = (secs * FS as f64) as usize;
    let x = speech_shaped(&mut rng, n, 0.1);
    let echo = synthesize_echo(&x, &random_echo_path(&mut rng));
    let s = speech_shaped(&mut rng, n, 0.05);
    let w = ambient_noise(&mut rng, n, 0.005);
    let d: Vec<f64> = (0..n)
        .map(|i| echo.samples()[i] + s.samples()[i] + w.samples()[i])
        .collect();
    (Waveform::new(d).unwrap(), x)
}

fn hop_outputs(
    session: &mut Session,
    near: &Waveform,
    far: &Waveform,
    hops: usize,
) -> Vec<Vec<f64>> {
    let hop = session.hop_len();
    (0..hops)
        .map(|h| {
            let r = h * hop..(h + 1) * hop;
            session
                .process_hop(&near.samples()[r.clone()], &far.samples()[r])
                .unwrap()
                .samples
        })
        .collect()
}

#[test]
fn identical_runs_are_bit_identical() {
    let (d, x) = mixture(91, 3.0);
    let a = enhance_with(&mut with_network(), &d, &x).unwrap();
    let b = enhance_with(&mut with_network(), &d, &x).unwrap();
    assert_eq!(a.samples(), b.samples());
    assert_eq!(a.len(), d.len());
}

#[test]
fn outputs_never_depend_on_later_input() {
    let (d, x) = mixture(92, 3.0);
    let hops = d.len() / 256;
    let full = hop_outputs(&mut with_network(), &d, &x, hops);
    for cut in [1, 2, 17, hops / 2] {
        let mut near = d.samples()[..cut * 256].to_vec();
        let mut far = x.samples()[..cut * 256].to_vec();
        near.resize(d.len(), 0.5);
        far.resize(d.len(), -0.5);
        let (near, far) = (Waveform::new(near).unwrap(), Waveform::new(far).unwrap());
        let truncated = hop_outputs(&mut with_network(), &near, &far, hops);
        assert_eq!(truncated[..cut], full[..cut], "first {cut} hops");
    }
}

#[test]
fn latency_is_one_hop_with_the_network_and_none_without() {
    assert_eq!(with_network().latency(), 256);
    assert_eq!(no_network(false).latency(), 0);
    assert!(with_network().latency() <= 512);
}

#[test]
fn filter_stage_alone_cancels_a_linear_echo() {
    let st = single_talk(93, Far::White, 12.0);
    let e = enhance_with(&mut no_network(false), &st.d, &st.x).unwrap();
    let erle = erle_on(st.d.samples(), e.samples(), 6 * FS..12 * FS);
    assert!(erle >= 20.0, "ERLE {erle:.1} dB");
}

#[test]
fn long_far_end_delay_is_compensated() {
    let mut rng = ChaCha8Rng::seed_from_u64(94);
    let n = 12 * FS;
    let x = white_noise(&mut rng, n, 0.1);
    let rir = random_echo_path(&mut rng);
    let lag = 700 * FS / 1000;
    let mut shifted = vec![0.0; lag];
    shifted.extend_from_slice(&x.samples()[..n - lag]);
    let d = synthesize_echo(&Waveform::new(shifted).unwrap(), &rir);

    let with_delay = enhance_with(&mut no_network(false), &d, &x).unwrap();
    let without = enhance_with(&mut no_network(true), &d, &x).unwrap();
    let tail = 8 * FS..n;
    let on = erle_on(d.samples(), with_delay.samples(), tail.clone());
    let off = erle_on(d.samples(), without.samples(), tail);
    assert!(on >= 20.0, "ERLE with compensation {on:.1} dB");
    assert!(off < 3.0, "ERLE without compensation {off:.1} dB");
}

#[test]
fn random_network_output_is_finite_and_bounded() {
    let (d, x) = mixture(95, 2.0);
    let out = enhance_with(&mut with_network(), &d, &x).unwrap();
    let peak_in = d.samples().iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let peak_out = out.samples().iter().fold(0.0f64, |m, v| m.max(v.abs()));
    assert!(out.samples().iter().all(|v| v.is_finite()));
    assert!(
        peak_out <= 4.0 * peak_in,
        "peak {peak_out} vs input {peak_in}"
    );
}
