//! Named parameter tensors.

use std::collections::BTreeMap;

use rand::Rng;

use crate::nn::ModelConfig;
use crate::{Error, Result};

/// A dense row-major tensor of f64 values with explicit shape.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    dims: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(dims: &[usize]) -> Self {
        let len = dims.iter().product();
        Self {
            dims: dims.to_vec(),
            data: vec![0.0; len],
        }
    }

    pub fn from_data(dims: &[usize], data: Vec<f64>) -> Result<Self> {
        let expect: usize = dims.iter().product();
        if data.len() != expect {
            return Err(Error::DimensionMismatch(format!(
                "tensor data length {} does not match shape {:?}",
                data.len(),
                dims
            )));
        }
        Ok(Self {
            dims: dims.to_vec(),
            data,
        })
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// Row `r` of a rank-2 tensor.
    pub fn row(&self, r: usize) -> &[f64] {
        let cols = self.dims[1];
        &self.data[r * cols..(r + 1) * cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        let cols = self.dims[1];
        &mut self.data[r * cols..(r + 1) * cols]
    }
}

/// Named tensors with deterministic (sorted) iteration order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamSet {
    map: BTreeMap<String, Tensor>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor) {
        self.map.insert(name.into(), tensor);
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.map
            .get(name)
            .ok_or_else(|| Error::DimensionMismatch(format!("missing tensor {name:?}")))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor> {
        self.map
            .get_mut(name)
            .ok_or_else(|| Error::DimensionMismatch(format!("missing tensor {name:?}")))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.map.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Tensor)> {
        self.map.iter_mut()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.map.keys()
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    /// Total scalar parameter count.
    pub fn num_params(&self) -> usize {
        self.map.values().map(Tensor::len).sum()
    }

    /// Same tensor names and shapes, all zeros. The natural gradient
    /// container.
    pub fn zeros_like(&self) -> ParamSet {
        let mut out = ParamSet::new();
        for (name, t) in &self.map {
            out.insert(name.clone(), Tensor::zeros(t.dims()));
        }
        out
    }

    pub fn validate_finite(&self) -> Result<()> {
        for (name, t) in &self.map {
            if t.data().iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("tensor {name:?}")));
            }
        }
        Ok(())
    }

    /// Checks this set matches another's names and shapes.
    pub fn validate_shapes(&self, like: &ParamSet) -> Result<()> {
        if self.map.len() != like.map.len() {
            return Err(Error::DimensionMismatch(format!(
                "tensor count {} vs {}",
                self.map.len(),
                like.map.len()
            )));
        }
        for (name, t) in &self.map {
            let other = like.get(name)?;
            if t.dims() != other.dims() {
                return Err(Error::DimensionMismatch(format!(
                    "tensor {name:?}: {:?} vs {:?}",
                    t.dims(),
                    other.dims()
                )));
            }
        }
        Ok(())
    }

    /// self += scale * other, tensorwise.
    pub fn accumulate(&mut self, other: &ParamSet, scale: f64) -> Result<()> {
        self.validate_shapes(other)?;
        for (name, t) in &mut self.map {
            let src = &other.map[name];
            for (a, b) in t.data_mut().iter_mut().zip(src.data()) {
                *a += scale * b;
            }
        }
        Ok(())
    }

    /// Rounds every value to the nearest single-precision float so the set
    /// survives an f32 checkpoint round trip without loss.
    pub fn quantize_f32(&mut self) {
        for t in self.map.values_mut() {
            for v in t.data_mut() {
                *v = *v as f32 as f64;
            }
        }
    }

    pub fn bitwise_eq(&self, other: &ParamSet) -> bool {
        if self.map.len() != other.map.len() {
            return false;
        }
        self.map.iter().zip(other.map.iter()).all(|((an, at), (bn, bt))| {
            an == bn
                && at.dims() == bt.dims()
                && at
                    .data()
                    .iter()
                    .zip(bt.data())
                    .all(|(x, y)| x.to_bits() == y.to_bits())
        })
    }

    /// Flat coordinate access across tensors in name order; used by the
    /// finite-difference checks.
    pub fn flat_len(&self) -> usize {
        self.num_params()
    }

    pub fn get_flat(&self, mut index: usize) -> f64 {
        for t in self.map.values() {
            if index < t.len() {
                return t.data()[index];
            }
            index -= t.len();
        }
        panic!("flat index out of range");
    }

    pub fn set_flat(&mut self, mut index: usize, value: f64) {
        for t in self.map.values_mut() {
            if index < t.len() {
                t.data_mut()[index] = value;
                return;
            }
            index -= t.len();
        }
        panic!("flat index out of range");
    }
}

/// The full tensor layout for a configuration. Decoder layer 0 consumes the
/// token embedding concatenated with the attention context.
pub fn param_shapes(cfg: &ModelConfig) -> Vec<(String, Vec<usize>)> {
    let v = cfg.vocab_size;
    let e = cfg.embed_dim;
    let h = cfg.hidden_dim;
    let mut shapes = vec![("embedding".to_string(), vec![v, e])];
    for l in 0..cfg.num_layers {
        let enc_in = if l == 0 { e } else { h };
        shapes.push((format!("enc.l{l}.w_ih"), vec![4 * h, enc_in]));
        shapes.push((format!("enc.l{l}.w_hh"), vec![4 * h, h]));
        shapes.push((format!("enc.l{l}.bias"), vec![4 * h]));
        let dec_in = if l == 0 { e + h } else { h };
        shapes.push((format!("dec.l{l}.w_ih"), vec![4 * h, dec_in]));
        shapes.push((format!("dec.l{l}.w_hh"), vec![4 * h, h]));
        shapes.push((format!("dec.l{l}.bias"), vec![4 * h]));
    }
    shapes.push(("att.w_query".to_string(), vec![h, h]));
    shapes.push(("att.w_memory".to_string(), vec![h, h]));
    shapes.push(("att.v".to_string(), vec![h]));
    shapes.push(("out.w".to_string(), vec![v, h]));
    shapes.push(("out.b".to_string(), vec![v]));
    shapes
}

/// Seeded uniform(-0.08, 0.08) initialization, quantized to the f32 grid so
/// a fresh model checkpoints losslessly.
pub fn init_params(cfg: &ModelConfig, seed: u64) -> ParamSet {
    let mut rng = crate::rng::stream(seed, "init");
    let mut params = ParamSet::new();
    for (name, dims) in param_shapes(cfg) {
        let mut t = Tensor::zeros(&dims);
        for v in t.data_mut() {
            *v = rng.gen_range(-0.08..0.08);
        }
        params.insert(name, t);
    }
    params.quantize_f32();
    params
}
