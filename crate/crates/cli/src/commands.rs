use std::fs;
use std::path::Path;

use aecns::pipeline::{self, run_metrics, SessionConfig, Truth};
use aecns::scene::{export_scene, load_scene_dir, SceneSpec};
use aecns::signal::wav::{read_wav, write_wav};
use aecns::Error;

use crate::{EnhanceArgs, MetricsArgs, SimulateArgs};

/// A failed command with its process exit code.
#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub message: String,
}

impl Failure {
    pub const USAGE: u8 = 1;
    pub const DATA: u8 = 2;
    pub const INTERNAL: u8 = 3;

    fn usage(message: impl Into<String>) -> Self {
        Self {
            code: Self::USAGE,
            message: message.into(),
        }
    }

    fn internal(message: impl Into<String>) -> Self {
        Self {
            code: Self::INTERNAL,
            message: message.into(),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Config(_) => Self::USAGE,
            _ => Self::DATA,
        };
        Self {
            code,
            message: e.to_string(),
        }
    }
}

fn context(path: &Path) -> impl Fn(Error) -> Failure + '_ {
    move |e| {
        let mut f = Failure::from(e);
        f.message = format!("{}: {}", path.display(), f.message);
        f
    }
}

pub fn enhance(args: &EnhanceArgs) -> Result<(), Failure> {
    let mut cfg = match &args.config {
        Some(path) => {
            let text = fs::read_to_string(path)
                .map_err(|e| Failure::usage(format!("{}: {e}", path.display())))?;
            SessionConfig::from_toml(&text).map_err(context(path))?
        }
        None => SessionConfig::default(),
    };
    if args.weights.is_some() {
        cfg.weights.clone_from(&args.weights);
    }
    cfg.bypass.network |= args.no_network;
    cfg.bypass.filter |= args.no_filter;
    cfg.bypass.delay |= args.no_delay;
    if args.out.is_some() {
        cfg.output.clone_from(&args.out);
    }
    let out = cfg.output.clone().ok_or_else(|| {
        Failure::usage("no output path: pass --out or set `output` in the config")
    })?;
    cfg.validate()?;
    if !cfg.network_enabled() && !cfg.bypass.network {
        log::info!("no weight file given; the network stage is skipped");
    }

    let near = read_wav(&args.near).map_err(context(&args.near))?;
    let far = read_wav(&args.far).map_err(context(&args.far))?;
    let enhanced = pipeline::enhance(&near, &far, &cfg)?;
    let expected = near.len().min(far.len());
    if enhanced.len() != expected {
        return Err(Failure::internal(format!(
            "output holds {} samples, expected {expected}",
            enhanced.len()
        )));
    }
    write_wav(&out, &enhanced).map_err(context(&out))?;
    log::info!("wrote {} samples to {}", enhanced.len(), out.display());
    Ok(())
}

pub fn simulate(args: &SimulateArgs) -> Result<(), Failure> {
    let text = fs::read_to_string(&args.spec)
        .map_err(|e| Failure::usage(format!("{}: {e}", args.spec.display())))?;
    let spec = SceneSpec::from_toml(&text).map_err(|e| {
        let mut f = context(&args.spec)(e);
        f.code = Failure::USAGE;
        f
    })?;
    for i in 0..args.count {
        let seed = args.seed.wrapping_add(i as u64);
        let scene = spec.with_seed(seed).generate()?;
        let dir = args.out_dir.join(format!("scene_{i:04}"));
        export_scene(&dir, &scene).map_err(context(&dir))?;
        log::info!("scene {i} (seed {seed}) written to {}", dir.display());
    }
    Ok(())
}

pub fn metrics(args: &MetricsArgs) -> Result<(), Failure> {
    let scene = load_scene_dir(&args.scene_dir).map_err(context(&args.scene_dir))?;
    let enhanced = read_wav(&args.enhanced).map_err(context(&args.enhanced))?;
    let truth = Truth {
        target: scene.target,
        mic: scene.mic,
        echo: scene.echo.or(scene.far),
    };
    let report = run_metrics(&truth, &enhanced)?;
    let text =
        serde_json::to_string_pretty(&report).map_err(|e| Failure::internal(e.to_string()))?;
    if args.json.as_os_str() == "-" {
        println!("{text}");
    } else {
        fs::write(&args.json, text + "\n").map_err(|e| Failure {
            code: Failure::DATA,
            message: format!("{}: {e}", args.json.display()),
        })?;
    }
    Ok(())
}
