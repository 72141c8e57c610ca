//! Dense row-major `f32` tensors and the few kernels the toy model needs.
//!
//! Hidden states are rank-3 `[batch, length, depth]`. The L2-norm reductions
//! that drive halting live here too, accumulated in `f64`.

use std::fmt;

use crate::error::{LacError, Result};
use crate::rng::SeededRng;

/// Epsilon used by [`layer_norm_pre`] throughout the crate.
pub const NORM_EPS: f32 = 1e-5;

#[derive(Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f32>,
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.data.len() <= 16 {
            write!(f, "Tensor{:?} {:?}", self.shape, self.data)
        } else {
            write!(f, "Tensor{:?} [{} values]", self.shape, self.data.len())
        }
    }
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(LacError::Shape(format!(
                "shape {:?} needs {} values, got {}",
                shape,
                expected,
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn full(shape: &[usize], value: f32) -> Self {
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![value; n],
        }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn ones(shape: &[usize]) -> Self {
        Self::full(shape, 1.0)
    }

    /// Values uniform in `[-1, 1)` drawn from [`SeededRng`] in row-major order.
    pub fn random(seed: u64, shape: &[usize]) -> Self {
        let mut rng = SeededRng::new(seed);
        let n = shape.iter().product();
        let data = (0..n).map(|_| rng.uniform(-1.0, 1.0)).collect();
        Self {
            shape: shape.to_vec(),
            data,
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut t = Self::zeros(&[n, n]);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    /// `(batch, length, depth)` of a rank-3 tensor.
    pub fn dims3(&self) -> Result<(usize, usize, usize)> {
        match self.shape.as_slice() {
            &[b, l, d] => Ok((b, l, d)),
            other => Err(LacError::Shape(format!(
                "expected rank-3 [batch, length, depth], got {:?}",
                other
            ))),
        }
    }

    pub fn reshape(mut self, shape: Vec<usize>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != self.data.len() {
            return Err(LacError::Shape(format!(
                "cannot reshape {:?} into {:?}",
                self.shape, shape
            )));
        }
        self.shape = shape;
        Ok(self)
    }

    pub fn check_finite(&self) -> Result<()> {
        match self.data.iter().position(|v| !v.is_finite()) {
            Some(index) => Err(LacError::NonFinite {
                index,
                value: self.data[index],
            }),
            None => Ok(()),
        }
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        if self.shape != other.shape {
            return Err(LacError::Shape(format!(
                "add: {:?} vs {:?}",
                self.shape, other.shape
            )));
        }
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a + b)
            .collect();
        Ok(Tensor {
            shape: self.shape.clone(),
            data,
        })
    }

    pub fn scale(&self, c: f32) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| v * c).collect(),
        }
    }

    /// Flat range of the depth vector for token `(example, token)` of a rank-3 tensor.
    pub fn token_range(&self, example: usize, token: usize) -> Result<std::ops::Range<usize>> {
        let (b, l, d) = self.dims3()?;
        if example >= b {
            return Err(LacError::IndexOutOfRange {
                index: example,
                extent: b,
            });
        }
        if token >= l {
            return Err(LacError::IndexOutOfRange {
                index: token,
                extent: l,
            });
        }
        let start = (example * l + token) * d;
        Ok(start..start + d)
    }
}

/// Level at which norms are reduced and halting decisions are taken.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum NormGranularity {
    PerBatch,
    PerExample,
    PerToken,
}

impl NormGranularity {
    /// Number of independent halting units for a `[batch, length, _]` hidden state.
    pub fn unit_count(self, batch: usize, length: usize) -> usize {
        match self {
            NormGranularity::PerBatch => 1,
            NormGranularity::PerExample => batch,
            NormGranularity::PerToken => batch * length,
        }
    }

    /// Unit that owns token `(example, token)`.
    pub fn unit_of(self, example: usize, token: usize, length: usize) -> usize {
        match self {
            NormGranularity::PerBatch => 0,
            NormGranularity::PerExample => example,
            NormGranularity::PerToken => example * length + token,
        }
    }

    pub fn output_shape(self, batch: usize, length: usize) -> Vec<usize> {
        match self {
            NormGranularity::PerBatch => vec![1],
            NormGranularity::PerExample => vec![batch, 1],
            NormGranularity::PerToken => vec![batch, length, 1],
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            NormGranularity::PerBatch => "batch",
            NormGranularity::PerExample => "example",
            NormGranularity::PerToken => "token",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "batch" => Some(NormGranularity::PerBatch),
            "example" => Some(NormGranularity::PerExample),
            "token" => Some(NormGranularity::PerToken),
            _ => None,
        }
    }
}

/// L2 norm of a rank-3 hidden state reduced at granularity `g`.
///
/// Output shapes: `[1]` per batch, `[B, 1]` per example, `[B, L, 1]` per token.
/// Sums of squares are accumulated in `f64` and the root is rounded to `f32`.
pub fn l2_norm(h: &Tensor, g: NormGranularity) -> Result<Tensor> {
    let (b, l, d) = h.dims3()?;
    h.check_finite()?;
    let mut sums = vec![0f64; g.unit_count(b, l)];
    for e in 0..b {
        for t in 0..l {
            let start = (e * l + t) * d;
            let sq: f64 = h.data[start..start + d]
                .iter()
                .map(|&v| (v as f64) * (v as f64))
                .sum();
            sums[g.unit_of(e, t, l)] += sq;
        }
    }
    let data = sums.into_iter().map(|s| s.sqrt() as f32).collect();
    Tensor::new(g.output_shape(b, l), data)
}

/// Row-major matrix product of two rank-2 tensors.
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (m, k) = match a.shape() {
        &[m, k] => (m, k),
        s => {
            return Err(LacError::Shape(format!(
                "matmul lhs must be rank 2, got {:?}",
                s
            )))
        }
    };
    let (k2, n) = match b.shape() {
        &[k2, n] => (k2, n),
        s => {
            return Err(LacError::Shape(format!(
                "matmul rhs must be rank 2, got {:?}",
                s
            )))
        }
    };
    if k != k2 {
        return Err(LacError::Shape(format!(
            "matmul inner dimensions differ: [{m}, {k}] x [{k2}, {n}]"
        )));
    }
    let mut out = vec![0f32; m * n];
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a.data[i * k + p];
            let brow = &b.data[p * n..(p + 1) * n];
            for (o, &bv) in row.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    Tensor::new(vec![m, n], out)
}

/// RMS normalization over the last axis followed by an elementwise gain:
/// `x / sqrt(mean(x^2) + eps) * gain`.
pub fn layer_norm_pre(h: &Tensor, gain: &Tensor, eps: f32) -> Result<Tensor> {
    let depth = *h
        .shape()
        .last()
        .ok_or_else(|| LacError::Shape("layer_norm_pre on a rank-0 tensor".into()))?;
    if gain.len() != depth {
        return Err(LacError::Shape(format!(
            "gain has {} values but depth is {}",
            gain.len(),
            depth
        )));
    }
    let mut out = h.clone();
    if depth == 0 {
        return Ok(out);
    }
    for row in out.data.chunks_mut(depth) {
        let ms: f64 = row.iter().map(|&v| (v as f64) * (v as f64)).sum::<f64>() / depth as f64;
        let inv = (1.0 / (ms + eps as f64).sqrt()) as f32;
        for (v, &g) in row.iter_mut().zip(gain.data()) {
            *v = *v * inv * g;
        }
    }
    Ok(out)
}
