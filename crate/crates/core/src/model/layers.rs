//! Real and complex building blocks of the cores, evaluated one frame at a
//! time.

use std::collections::VecDeque;

use super::weights::{ModelWeights, WeightError};

pub const LN_EPS: f64 = 1e-5;

/// Four-lane dot product; the split accumulators let the compiler vectorize.
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f64; 4];
    let ca = a.chunks_exact(4);
    let cb = b.chunks_exact(4);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        acc[0] += x[0] * y[0];
        acc[1] += x[1] * y[1];
        acc[2] += x[2] * y[2];
        acc[3] += x[3] * y[3];
    }
    let mut tail = 0.0;
    for (x, y) in ra.iter().zip(rb) {
        tail += x * y;
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// `out[i] += sum_j w[i * cols + j] * x[j]`.
pub(crate) fn matvec_add(w: &[f64], x: &[f64], out: &mut [f64]) {
    let cols = x.len();
    for (o, row) in out.iter_mut().zip(w.chunks_exact(cols)) {
        *o += dot(row, x);
    }
}

/// `out[i] -= sum_j w[i * cols + j] * x[j]`.
fn matvec_sub(w: &[f64], x: &[f64], out: &mut [f64]) {
    let cols = x.len();
    for (o, row) in out.iter_mut().zip(w.chunks_exact(cols)) {
        *o -= dot(row, x);
    }
}

fn fetch(w: &ModelWeights, name: &str, shape: &[usize]) -> Result<Vec<f64>, WeightError> {
    let t = w
        .get(name)
        .ok_or_else(|| WeightError::Missing(name.to_string()))?;
    if t.shape() != shape {
        return Err(WeightError::Shape {
            name: name.to_string(),
            expected: shape.to_vec(),
            actual: t.shape().to_vec(),
        });
    }
    Ok(t.data().iter().map(|&v| f64::from(v)).collect())
}

#[derive(Clone, Debug)]
pub struct Linear {
    pub inputs: usize,
    pub outputs: usize,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Linear {
    pub fn load(
        w: &ModelWeights,
        prefix: &str,
        inputs: usize,
        outputs: usize,
    ) -> Result<Self, WeightError> {
        Ok(Self {
            inputs,
            outputs,
            weight: fetch(w, &format!("{prefix}.weight"), &[outputs, inputs])?,
            bias: fetch(w, &format!("{prefix}.bias"), &[outputs])?,
        })
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        let mut out = self.bias.clone();
        matvec_add(&self.weight, x, &mut out);
        out
    }
}

#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub gain: Vec<f64>,
    pub bias: Vec<f64>,
}

impl LayerNorm {
    pub fn load(w: &ModelWeights, prefix: &str, width: usize) -> Result<Self, WeightError> {
        Ok(Self {
            gain: fetch(w, &format!("{prefix}.gain"), &[width])?,
            bias: fetch(w, &format!("{prefix}.bias"), &[width])?,
        })
    }

    pub fn apply(&self, x: &mut [f64]) {
        let n = x.len() as f64;
        let mean = x.iter().sum::<f64>() / n;
        let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let inv = 1.0 / (var + LN_EPS).sqrt();
        for ((v, g), b) in x.iter_mut().zip(&self.gain).zip(&self.bias) {
            *v = (*v - mean) * inv * g + b;
        }
    }
}

#[derive(Clone, Debug)]
pub struct Prelu {
    pub slope: Vec<f64>,
}

impl Prelu {
    pub fn load(w: &ModelWeights, prefix: &str, width: usize) -> Result<Self, WeightError> {
        Ok(Self {
            slope: fetch(w, &format!("{prefix}.slope"), &[width])?,
        })
    }

    pub fn apply(&self, x: &mut [f64]) {
        for (v, a) in x.iter_mut().zip(&self.slope) {
            if *v < 0.0 {
                *v *= a;
            }
        }
    }
}

/// Linear layer followed by layer normalization and PReLU.
#[derive(Clone, Debug)]
pub struct FcCustom {
    pub linear: Linear,
    pub norm: LayerNorm,
    pub prelu: Prelu,
}

impl FcCustom {
    pub fn load(
        w: &ModelWeights,
        prefix: &str,
        inputs: usize,
        outputs: usize,
    ) -> Result<Self, WeightError> {
        Ok(Self {
            linear: Linear::load(w, &format!("{prefix}.linear"), inputs, outputs)?,
            norm: LayerNorm::load(w, &format!("{prefix}.norm"), outputs)?,
            prelu: Prelu::load(w, &format!("{prefix}.prelu"), outputs)?,
        })
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        let mut y = self.linear.forward(x);
        self.norm.apply(&mut y);
        self.prelu.apply(&mut y);
        y
    }
}

/// Past inputs of one causal convolution, oldest first.
#[derive(Clone, Debug, PartialEq)]
pub struct History {
    frames: VecDeque<Vec<f64>>,
}

impl History {
    pub fn new(len: usize, width: usize) -> Self {
        Self {
            frames: (0..len).map(|_| vec![0.0; width]).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn width(&self) -> Option<usize> {
        self.frames.front().map(Vec::len)
    }

    /// Frame `offset` steps back (1 = previous frame).
    fn back(&self, offset: usize) -> &[f64] {
        &self.frames[self.frames.len() - offset]
    }

    fn push(&mut self, frame: &[f64]) {
        if let Some(mut oldest) = self.frames.pop_front() {
            oldest.copy_from_slice(frame);
            self.frames.push_back(oldest);
        }
    }
}

/// Causal dilated 1-D convolution with weight layout `[out, in, kernel]`:
/// `y[t] = b + sum_j W[:, :, j] x[t - (kernel - 1 - j) * dilation]`.
#[derive(Clone, Debug)]
pub struct CausalConv {
    pub inputs: usize,
    pub outputs: usize,
    pub kernel: usize,
    pub dilation: usize,
    /// Per-tap `[out, in]` matrices, tap 0 oldest.
    taps: Vec<Vec<f64>>,
    pub bias: Vec<f64>,
}

impl CausalConv {
    pub fn from_raw(
        weight: &[f64],
        bias: Vec<f64>,
        inputs: usize,
        outputs: usize,
        kernel: usize,
        dilation: usize,
    ) -> Self {
        let mut taps = vec![vec![0.0; outputs * inputs]; kernel];
        for o in 0..outputs {
            for i in 0..inputs {
                for (j, tap) in taps.iter_mut().enumerate() {
                    tap[o * inputs + i] = weight[(o * inputs + i) * kernel + j];
                }
            }
        }
        Self {
            inputs,
            outputs,
            kernel,
            dilation,
            taps,
            bias,
        }
    }

    pub fn load(
        w: &ModelWeights,
        prefix: &str,
        inputs: usize,
        outputs: usize,
        kernel: usize,
        dilation: usize,
    ) -> Result<Self, WeightError> {
        let weight = fetch(w, &format!("{prefix}.weight"), &[outputs, inputs, kernel])?;
        let bias = fetch(w, &format!("{prefix}.bias"), &[outputs])?;
        Ok(Self::from_raw(
            &weight, bias, inputs, outputs, kernel, dilation,
        ))
    }

    /// Frames of look-back this convolution needs.
    pub fn receptive(&self) -> usize {
        (self.kernel - 1) * self.dilation
    }

    pub fn new_history(&self, width: usize) -> History {
        History::new(self.receptive(), width)
    }

    /// Adds the convolution of `x` (current frame) and the history into
    /// `out` without the bias. `part` selects which slice of each stored
    /// frame is used, letting complex layers keep `[re; im]` in one history.
    fn accumulate(
        &self,
        taps: &[Vec<f64>],
        x: &[f64],
        hist: &History,
        part: usize,
        out: &mut [f64],
        sub: bool,
    ) {
        for (j, tap) in taps.iter().enumerate() {
            let offset = (self.kernel - 1 - j) * self.dilation;
            let frame = if offset == 0 {
                x
            } else {
                &hist.back(offset)[part * self.inputs..(part + 1) * self.inputs]
            };
            if sub {
                matvec_sub(tap, frame, out);
            } else {
                matvec_add(tap, frame, out);
            }
        }
    }

    pub fn forward(&self, x: &[f64], hist: &mut History) -> Vec<f64> {
        let mut out = self.bias.clone();
        self.accumulate(&self.taps, x, hist, 0, &mut out, false);
        hist.push(x);
        out
    }
}

/// Complex causal convolution `(Wr + jWi)(xr + jxi) + (br + jbi)` built
/// from four real convolutions.
#[derive(Clone, Debug)]
pub struct ComplexConv {
    pub re: CausalConv,
    pub im: CausalConv,
}

impl ComplexConv {
    pub fn load(
        w: &ModelWeights,
        prefix: &str,
        inputs: usize,
        outputs: usize,
        kernel: usize,
        dilation: usize,
    ) -> Result<Self, WeightError> {
        let shape = [outputs, inputs, kernel];
        let wr = fetch(w, &format!("{prefix}.weight.re"), &shape)?;
        let wi = fetch(w, &format!("{prefix}.weight.im"), &shape)?;
        let br = fetch(w, &format!("{prefix}.bias.re"), &[outputs])?;
        let bi = fetch(w, &format!("{prefix}.bias.im"), &[outputs])?;
        Ok(Self {
            re: CausalConv::from_raw(&wr, br, inputs, outputs, kernel, dilation),
            im: CausalConv::from_raw(&wi, bi, inputs, outputs, kernel, dilation),
        })
    }

    pub fn new_history(&self) -> History {
        self.re.new_history(2 * self.re.inputs)
    }

    pub fn forward(&self, xr: &[f64], xi: &[f64], hist: &mut History) -> (Vec<f64>, Vec<f64>) {
        let c = &self.re;
        let mut yr = self.re.bias.clone();
        let mut yi = self.im.bias.clone();
        c.accumulate(&self.re.taps, xr, hist, 0, &mut yr, false);
        c.accumulate(&self.im.taps, xi, hist, 1, &mut yr, true);
        c.accumulate(&self.re.taps, xi, hist, 1, &mut yi, false);
        c.accumulate(&self.im.taps, xr, hist, 0, &mut yi, false);
        if !hist.is_empty() {
            let mut both = Vec::with_capacity(2 * xr.len());
            both.extend_from_slice(xr);
            both.extend_from_slice(xi);
            hist.push(&both);
        }
        (yr, yi)
    }
}

/// Complex affine map `(Wr + jWi)(xr + jxi) + (br + jbi)`.
#[derive(Clone, Debug)]
pub struct ComplexLinear {
    pub wr: Vec<f64>,
    pub wi: Vec<f64>,
    pub br: Vec<f64>,
    pub bi: Vec<f64>,
}

impl ComplexLinear {
    pub fn load(
        w: &ModelWeights,
        prefix: &str,
        inputs: usize,
        outputs: usize,
    ) -> Result<Self, WeightError> {
        let shape = [outputs, inputs];
        Ok(Self {
            wr: fetch(w, &format!("{prefix}.weight.re"), &shape)?,
            wi: fetch(w, &format!("{prefix}.weight.im"), &shape)?,
            br: fetch(w, &format!("{prefix}.bias.re"), &[outputs])?,
            bi: fetch(w, &format!("{prefix}.bias.im"), &[outputs])?,
        })
    }

    pub fn forward(&self, xr: &[f64], xi: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let mut yr = self.br.clone();
        let mut yi = self.bi.clone();
        matvec_add(&self.wr, xr, &mut yr);
        matvec_sub(&self.wi, xi, &mut yr);
        matvec_add(&self.wr, xi, &mut yi);
        matvec_add(&self.wi, xr, &mut yi);
        (yr, yi)
    }
}

/// Independent layer normalization of the real and imaginary parts.
#[derive(Clone, Debug)]
pub struct ComplexNorm {
    pub re: LayerNorm,
    pub im: LayerNorm,
}

impl ComplexNorm {
    pub fn load(w: &ModelWeights, prefix: &str, width: usize) -> Result<Self, WeightError> {
        Ok(Self {
            re: LayerNorm::load(w, &format!("{prefix}_re"), width)?,
            im: LayerNorm::load(w, &format!("{prefix}_im"), width)?,
        })
    }

    pub fn apply(&self, xr: &mut [f64], xi: &mut [f64]) {
        self.re.apply(xr);
        self.im.apply(xi);
    }
}

/// Complex linear map, complex layer norm, real PReLU on each part.
#[derive(Clone, Debug)]
pub struct ComplexFc {
    pub linear: ComplexLinear,
    pub norm: ComplexNorm,
    pub prelu: Prelu,
}

impl ComplexFc {
    pub fn load(
        w: &ModelWeights,
        prefix: &str,
        inputs: usize,
        outputs: usize,
    ) -> Result<Self, WeightError> {
        Ok(Self {
            linear: ComplexLinear::load(w, &format!("{prefix}.linear"), inputs, outputs)?,
            norm: ComplexNorm::load(w, &format!("{prefix}.norm"), outputs)?,
            prelu: Prelu::load(w, &format!("{prefix}.prelu"), outputs)?,
        })
    }

    pub fn forward(&self, xr: &[f64], xi: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let (mut yr, mut yi) = self.linear.forward(xr, xi);
        self.norm.apply(&mut yr, &mut yi);
        self.prelu.apply(&mut yr);
        self.prelu.apply(&mut yi);
        (yr, yi)
    }
}
