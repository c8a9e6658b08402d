use num_complex::Complex64;

use super::layers::{
    CausalConv, ComplexConv, ComplexFc, ComplexNorm, FcCustom, History, LayerNorm, Linear, Prelu,
};
use super::weights::{ModelWeights, WeightError};
use super::{dilation_rate, ModelConfig};
use crate::error::{Error, Result};

/// Causal history buffers of one core, one per convolution in block order.
#[derive(Clone, Debug, PartialEq)]
pub struct CoreState {
    histories: Vec<History>,
}

impl CoreState {
    /// Frames held by each convolution's buffer.
    pub fn buffer_lengths(&self) -> Vec<usize> {
        self.histories.iter().map(History::len).collect()
    }

    /// Total look-back in frames.
    pub fn receptive_field(&self) -> usize {
        self.buffer_lengths().iter().sum()
    }
}

fn check_state(state: &CoreState, expected: &[(usize, usize)]) -> Result<()> {
    let ok = state.histories.len() == expected.len()
        && state
            .histories
            .iter()
            .zip(expected)
            .all(|(h, &(len, width))| h.len() == len && (len == 0 || h.width() == Some(width)));
    if ok {
        Ok(())
    } else {
        Err(Error::InvalidInput(
            "core state was not created for this model".into(),
        ))
    }
}

fn sigmoid(x: f64) -> f64 {
    let s = 1.0 / (1.0 + (-x).exp());
    s.clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON)
}

#[derive(Clone, Debug)]
struct RealUnit {
    prelu: Prelu,
    norm: LayerNorm,
    conv: CausalConv,
}

impl RealUnit {
    fn load(
        w: &ModelWeights,
        p: &str,
        inputs: usize,
        outputs: usize,
        kernel: usize,
        dilation: usize,
    ) -> Result<Self, WeightError> {
        Ok(Self {
            prelu: Prelu::load(w, &format!("{p}.prelu"), inputs)?,
            norm: LayerNorm::load(w, &format!("{p}.norm"), inputs)?,
            conv: CausalConv::load(w, &format!("{p}.conv"), inputs, outputs, kernel, dilation)?,
        })
    }

    fn forward(&self, mut x: Vec<f64>, hist: &mut History) -> Vec<f64> {
        self.prelu.apply(&mut x);
        self.norm.apply(&mut x);
        self.conv.forward(&x, hist)
    }
}

/// First separation core: log magnitudes of e(n) and ỹ(n) in, magnitude
/// mask in (0, 1) out.
#[derive(Clone, Debug)]
pub struct MagnitudeCore {
    fc_e: FcCustom,
    fc_y: FcCustom,
    blocks: Vec<[RealUnit; 3]>,
    head: Linear,
}

impl MagnitudeCore {
    pub fn from_weights(w: &ModelWeights, cfg: &ModelConfig) -> Result<Self> {
        let (d, f, bins) = (cfg.d_model, cfg.d_f, cfg.bins);
        let trunk = 2 * d;
        let mut blocks = Vec::with_capacity(cfg.num_blocks);
        for b in 1..=cfg.num_blocks {
            let dil = dilation_rate(b, cfg.max_dilation)?;
            let p = format!("mag.blocks.{b}");
            blocks.push([
                RealUnit::load(w, &format!("{p}.unit1"), trunk, f, 1, 1)?,
                RealUnit::load(w, &format!("{p}.unit2"), f, f, cfg.kernel, dil)?,
                RealUnit::load(w, &format!("{p}.unit3"), f, trunk, 1, 1)?,
            ]);
        }
        Ok(Self {
            fc_e: FcCustom::load(w, "mag.fc_e", bins, d)?,
            fc_y: FcCustom::load(w, "mag.fc_y", bins, d)?,
            blocks,
            head: Linear::load(w, "mag.head", trunk, bins)?,
        })
    }

    fn layout(&self) -> Vec<(usize, usize)> {
        self.blocks
            .iter()
            .flat_map(|units| units.iter().map(|u| (u.conv.receptive(), u.conv.inputs)))
            .collect()
    }

    pub fn new_state(&self) -> CoreState {
        CoreState {
            histories: self
                .layout()
                .into_iter()
                .map(|(len, width)| History::new(len, width))
                .collect(),
        }
    }

    pub fn forward(
        &self,
        state: &mut CoreState,
        log_mag_e: &[f64],
        log_mag_y: &[f64],
    ) -> Result<Vec<f64>> {
        check_state(state, &self.layout())?;
        let bins = self.head.outputs;
        if log_mag_e.len() != bins || log_mag_y.len() != bins {
            return Err(Error::InvalidInput(format!(
                "magnitude core expects {bins} bins per input"
            )));
        }
        let mut trunk = self.fc_e.forward(log_mag_e);
        trunk.extend(self.fc_y.forward(log_mag_y));
        let mut hists = state.histories.iter_mut();
        for units in &self.blocks {
            let mut h = trunk.clone();
            for unit in units {
                h = unit.forward(h, hists.next().expect("layout checked"));
            }
            for (t, v) in trunk.iter_mut().zip(&h) {
                *t += v;
            }
        }
        Ok(self.head.forward(&trunk).into_iter().map(sigmoid).collect())
    }
}

#[derive(Clone, Debug)]
struct ComplexUnit {
    prelu: Prelu,
    norm: ComplexNorm,
    conv: ComplexConv,
}

impl ComplexUnit {
    fn load(
        w: &ModelWeights,
        p: &str,
        inputs: usize,
        outputs: usize,
        kernel: usize,
        dilation: usize,
    ) -> Result<Self, WeightError> {
        Ok(Self {
            prelu: Prelu::load(w, &format!("{p}.prelu"), inputs)?,
            norm: ComplexNorm::load(w, &format!("{p}.norm"), inputs)?,
            conv: ComplexConv::load(w, &format!("{p}.conv"), inputs, outputs, kernel, dilation)?,
        })
    }

    fn forward(
        &self,
        mut xr: Vec<f64>,
        mut xi: Vec<f64>,
        hist: &mut History,
    ) -> (Vec<f64>, Vec<f64>) {
        self.prelu.apply(&mut xr);
        self.prelu.apply(&mut xi);
        self.norm.apply(&mut xr, &mut xi);
        self.conv.forward(&xr, &xi, hist)
    }
}

/// Second separation core: masked error spectrum and echo spectrum in,
/// unbounded real and imaginary masks out.
#[derive(Clone, Debug)]
pub struct ComplexCore {
    fc_e: ComplexFc,
    fc_y: ComplexFc,
    blocks: Vec<[ComplexUnit; 3]>,
    head_re: Linear,
    head_im: Linear,
}

impl ComplexCore {
    pub fn from_weights(w: &ModelWeights, cfg: &ModelConfig) -> Result<Self> {
        let (d, f, bins) = (cfg.d_model, cfg.d_f, cfg.bins);
        let trunk = 2 * d;
        let mut blocks = Vec::with_capacity(cfg.num_blocks);
        for b in 1..=cfg.num_blocks {
            let dil = dilation_rate(b, cfg.max_dilation)?;
            let p = format!("cplx.blocks.{b}");
            blocks.push([
                ComplexUnit::load(w, &format!("{p}.unit1"), trunk, f, 1, 1)?,
                ComplexUnit::load(w, &format!("{p}.unit2"), f, f, cfg.kernel, dil)?,
                ComplexUnit::load(w, &format!("{p}.unit3"), f, trunk, 1, 1)?,
            ]);
        }
        Ok(Self {
            fc_e: ComplexFc::load(w, "cplx.fc_e", bins, d)?,
            fc_y: ComplexFc::load(w, "cplx.fc_y", bins, d)?,
            blocks,
            head_re: Linear::load(w, "cplx.head_re", 2 * trunk, bins)?,
            head_im: Linear::load(w, "cplx.head_im", 2 * trunk, bins)?,
        })
    }

    fn layout(&self) -> Vec<(usize, usize)> {
        self.blocks
            .iter()
            .flat_map(|units| {
                units
                    .iter()
                    .map(|u| (u.conv.re.receptive(), 2 * u.conv.re.inputs))
            })
            .collect()
    }

    pub fn new_state(&self) -> CoreState {
        CoreState {
            histories: self
                .layout()
                .into_iter()
                .map(|(len, width)| History::new(len, width))
                .collect(),
        }
    }

    pub fn forward(
        &self,
        state: &mut CoreState,
        masked_spec: &[Complex64],
        echo_spec: &[Complex64],
    ) -> Result<(Vec<f64>, Vec<f64>)> {
        check_state(state, &self.layout())?;
        let bins = self.head_re.outputs;
        if masked_spec.len() != bins || echo_spec.len() != bins {
            return Err(Error::InvalidInput(format!(
                "complex core expects {bins} bins per input"
            )));
        }
        let split = |s: &[Complex64]| -> (Vec<f64>, Vec<f64>) {
            (
                s.iter().map(|c| c.re).collect(),
                s.iter().map(|c| c.im).collect(),
            )
        };
        let (er, ei) = split(masked_spec);
        let (yr, yi) = split(echo_spec);
        let (mut re, mut im) = self.fc_e.forward(&er, &ei);
        let (yr, yi) = self.fc_y.forward(&yr, &yi);
        re.extend(yr);
        im.extend(yi);
        let mut hists = state.histories.iter_mut();
        for units in &self.blocks {
            let (mut hr, mut hi) = (re.clone(), im.clone());
            for unit in units {
                (hr, hi) = unit.forward(hr, hi, hists.next().expect("layout checked"));
            }
            for (t, v) in re.iter_mut().zip(&hr) {
                *t += v;
            }
            for (t, v) in im.iter_mut().zip(&hi) {
                *t += v;
            }
        }
        re.extend(im);
        Ok((self.head_re.forward(&re), self.head_im.forward(&re)))
    }
}
