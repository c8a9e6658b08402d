//! Binary weight container.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "MCTN" | version u32 | count u32
//! count x { name_len u16 | name utf-8 | rank u8 | dims u32 x rank | data f32 x prod(dims) }
//! crc32 u32 of every preceding byte
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use super::{dilation_rate, ModelConfig};

pub const MAGIC: &[u8; 4] = b"MCTN";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum WeightError {
    #[error("bad magic bytes {0:?}, expected \"MCTN\"")]
    BadMagic(Vec<u8>),
    #[error("unsupported format version {0}, expected {FORMAT_VERSION}")]
    Version(u32),
    #[error("checksum mismatch: stored {stored:#010x}, computed {computed:#010x}")]
    Checksum { stored: u32, computed: u32 },
    #[error("malformed weight file: {0}")]
    Malformed(String),
    #[error("tensor {name}: expected shape {expected:?}, found {actual:?}")]
    Shape {
        name: String,
        expected: Vec<usize>,
        actual: Vec<usize>,
    },
    #[error("missing tensor {0}")]
    Missing(String),
    #[error("unexpected tensor {0}")]
    Unexpected(String),
    #[error("duplicate tensor {0}")]
    Duplicate(String),
    #[error("tensor {0} holds non-finite values")]
    NonFinite(String),
    #[error("i/o: {0}")]
    Io(String),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f32>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f32>) -> Result<Self, WeightError> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(WeightError::Malformed(format!(
                "shape {shape:?} needs {n} values, got {}",
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }
}

/// Named tensors in file order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ModelWeights {
    names: Vec<String>,
    tensors: Vec<Tensor>,
    index: BTreeMap<String, usize>,
}

impl ModelWeights {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends a tensor; a repeated name is rejected.
    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor) -> Result<(), WeightError> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(WeightError::Duplicate(name));
        }
        self.index.insert(name.clone(), self.names.len());
        self.names.push(name);
        self.tensors.push(tensor);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.index.get(name).map(|&i| &self.tensors[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.index.get(name).map(|&i| &mut self.tensors[i])
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    pub fn num_values(&self) -> usize {
        self.tensors.iter().map(|t| t.data.len()).sum()
    }

    /// Checks names, shapes and values against what `cfg` requires.
    pub fn validate(&self, cfg: &ModelConfig) -> Result<(), WeightError> {
        let expected = expected_shapes(cfg).map_err(|e| WeightError::Malformed(e.to_string()))?;
        let mut wanted: BTreeMap<&str, &[usize]> = BTreeMap::new();
        for (name, shape) in &expected {
            wanted.insert(name, shape);
        }
        for (name, tensor) in self.iter() {
            let Some(shape) = wanted.get(name) else {
                return Err(WeightError::Unexpected(name.to_string()));
            };
            if tensor.shape() != *shape {
                return Err(WeightError::Shape {
                    name: name.to_string(),
                    expected: shape.to_vec(),
                    actual: tensor.shape().to_vec(),
                });
            }
            if tensor.data.iter().any(|v| !v.is_finite()) {
                return Err(WeightError::NonFinite(name.to_string()));
            }
        }
        for (name, _) in &expected {
            if self.get(name).is_none() {
                return Err(WeightError::Missing(name.clone()));
            }
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(12 + 4 * self.num_values() + 64 * self.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.len() as u32).to_le_bytes());
        for (name, tensor) in self.iter() {
            out.extend_from_slice(&(name.len() as u16).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.push(tensor.shape.len() as u8);
            for &d in &tensor.shape {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for &v in &tensor.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        out
    }

    /// Parses a weight file. Structure is checked here; names and shapes are
    /// checked by [`validate`](Self::validate).
    pub fn from_bytes(bytes: &[u8]) -> Result<Self, WeightError> {
        if bytes.len() < 4 || &bytes[..4] != MAGIC {
            return Err(WeightError::BadMagic(bytes[..bytes.len().min(4)].to_vec()));
        }
        if bytes.len() < 16 {
            return Err(WeightError::Checksum {
                stored: 0,
                computed: crc32fast::hash(bytes),
            });
        }
        let (body, tail) = bytes.split_at(bytes.len() - 4);
        let stored = u32::from_le_bytes(tail.try_into().expect("four bytes"));
        let computed = crc32fast::hash(body);
        if stored != computed {
            return Err(WeightError::Checksum { stored, computed });
        }
        let mut r = Reader { buf: body, pos: 4 };
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(WeightError::Version(version));
        }
        let count = r.u32()? as usize;
        let mut weights = ModelWeights::new();
        for _ in 0..count {
            let name_len = r.u16()? as usize;
            let name = std::str::from_utf8(r.take(name_len)?)
                .map_err(|_| WeightError::Malformed("tensor name is not utf-8".into()))?
                .to_string();
            let rank = r.u8()? as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(r.u32()? as usize);
            }
            let n = shape
                .iter()
                .try_fold(1usize, |acc, &d| acc.checked_mul(d))
                .ok_or_else(|| WeightError::Malformed(format!("tensor {name} is too large")))?;
            let raw = r
                .take(n.checked_mul(4).ok_or_else(|| {
                    WeightError::Malformed(format!("tensor {name} is too large"))
                })?)?;
            let data = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("four bytes")))
                .collect();
            weights.insert(name, Tensor { shape, data })?;
        }
        if r.pos != body.len() {
            return Err(WeightError::Malformed(format!(
                "{} trailing bytes after the last tensor",
                body.len() - r.pos
            )));
        }
        Ok(weights)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), WeightError> {
        fs::write(path, self.to_bytes()).map_err(|e| WeightError::Io(e.to_string()))
    }

    /// Reads and validates a weight file for `cfg`.
    pub fn load(path: impl AsRef<Path>, cfg: &ModelConfig) -> Result<Self, WeightError> {
        let bytes = fs::read(path).map_err(|e| WeightError::Io(e.to_string()))?;
        let weights = Self::from_bytes(&bytes)?;
        weights.validate(cfg)?;
        Ok(weights)
    }

    /// Seeded random initialization covering every tensor `cfg` requires.
    pub fn random(cfg: &ModelConfig, seed: u64) -> Result<Self, WeightError> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut weights = ModelWeights::new();
        for (name, shape) in
            expected_shapes(cfg).map_err(|e| WeightError::Malformed(e.to_string()))?
        {
            let n: usize = shape.iter().product();
            let fan_in: usize = shape.iter().skip(1).product::<usize>().max(1);
            let data: Vec<f32> = if name.ends_with("prelu.slope") {
                (0..n).map(|_| rng.random_range(0.0..0.5)).collect()
            } else if name.contains(".gain") {
                (0..n).map(|_| rng.random_range(0.5..1.5)).collect()
            } else if shape.len() == 1 {
                (0..n).map(|_| rng.random_range(-0.1..0.1)).collect()
            } else {
                let bound = (3.0 / fan_in as f32).sqrt();
                (0..n).map(|_| rng.random_range(-bound..bound)).collect()
            };
            weights.insert(name, Tensor { shape, data })?;
        }
        Ok(weights)
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], WeightError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| WeightError::Malformed("unexpected end of tensor data".into()))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, WeightError> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16, WeightError> {
        Ok(u16::from_le_bytes(
            self.take(2)?.try_into().expect("two bytes"),
        ))
    }

    fn u32(&mut self) -> Result<u32, WeightError> {
        Ok(u32::from_le_bytes(
            self.take(4)?.try_into().expect("four bytes"),
        ))
    }
}

fn push_real_unit(
    out: &mut Vec<(String, Vec<usize>)>,
    p: &str,
    inputs: usize,
    outputs: usize,
    kernel: usize,
) {
    out.push((format!("{p}.prelu.slope"), vec![inputs]));
    out.push((format!("{p}.norm.gain"), vec![inputs]));
    out.push((format!("{p}.norm.bias"), vec![inputs]));
    out.push((format!("{p}.conv.weight"), vec![outputs, inputs, kernel]));
    out.push((format!("{p}.conv.bias"), vec![outputs]));
}

fn push_complex_unit(
    out: &mut Vec<(String, Vec<usize>)>,
    p: &str,
    inputs: usize,
    outputs: usize,
    kernel: usize,
) {
    out.push((format!("{p}.prelu.slope"), vec![inputs]));
    for part in ["re", "im"] {
        out.push((format!("{p}.norm_{part}.gain"), vec![inputs]));
        out.push((format!("{p}.norm_{part}.bias"), vec![inputs]));
    }
    for part in ["re", "im"] {
        out.push((
            format!("{p}.conv.weight.{part}"),
            vec![outputs, inputs, kernel],
        ));
    }
    for part in ["re", "im"] {
        out.push((format!("{p}.conv.bias.{part}"), vec![outputs]));
    }
}

/// Canonical tensor names and shapes for `cfg`, in file order.
pub fn expected_shapes(cfg: &ModelConfig) -> crate::Result<Vec<(String, Vec<usize>)>> {
    cfg.validate()?;
    let (d, f, k, bins) = (cfg.d_model, cfg.d_f, cfg.kernel, cfg.bins);
    let trunk = 2 * d;
    let mut out = Vec::new();

    for input in ["fc_e", "fc_y"] {
        let p = format!("mag.{input}");
        out.push((format!("{p}.linear.weight"), vec![d, bins]));
        out.push((format!("{p}.linear.bias"), vec![d]));
        out.push((format!("{p}.norm.gain"), vec![d]));
        out.push((format!("{p}.norm.bias"), vec![d]));
        out.push((format!("{p}.prelu.slope"), vec![d]));
    }
    for b in 1..=cfg.num_blocks {
        dilation_rate(b, cfg.max_dilation)?;
        push_real_unit(&mut out, &format!("mag.blocks.{b}.unit1"), trunk, f, 1);
        push_real_unit(&mut out, &format!("mag.blocks.{b}.unit2"), f, f, k);
        push_real_unit(&mut out, &format!("mag.blocks.{b}.unit3"), f, trunk, 1);
    }
    out.push(("mag.head.weight".into(), vec![bins, trunk]));
    out.push(("mag.head.bias".into(), vec![bins]));

    for input in ["fc_e", "fc_y"] {
        let p = format!("cplx.{input}");
        for part in ["re", "im"] {
            out.push((format!("{p}.linear.weight.{part}"), vec![d, bins]));
        }
        for part in ["re", "im"] {
            out.push((format!("{p}.linear.bias.{part}"), vec![d]));
        }
        for part in ["re", "im"] {
            out.push((format!("{p}.norm_{part}.gain"), vec![d]));
            out.push((format!("{p}.norm_{part}.bias"), vec![d]));
        }
        out.push((format!("{p}.prelu.slope"), vec![d]));
    }
    for b in 1..=cfg.num_blocks {
        push_complex_unit(&mut out, &format!("cplx.blocks.{b}.unit1"), trunk, f, 1);
        push_complex_unit(&mut out, &format!("cplx.blocks.{b}.unit2"), f, f, k);
        push_complex_unit(&mut out, &format!("cplx.blocks.{b}.unit3"), f, trunk, 1);
    }
    for head in ["head_re", "head_im"] {
        out.push((format!("cplx.{head}.weight"), vec![bins, 2 * trunk]));
        out.push((format!("cplx.{head}.bias"), vec![bins]));
    }
    Ok(out)
}
