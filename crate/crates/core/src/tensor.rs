//! Dense row-major `f32` tensors and the forward-only kernels the model is
//! built from.
//!
//! Every reduction runs sequentially in index order, so identical inputs give
//! bitwise-identical outputs regardless of thread count or call site.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f32>,
}

impl Tensor {
    /// Builds a tensor, checking that `data` fills `shape` exactly and holds
    /// only finite values.
    pub fn new(shape: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        if shape.is_empty() || shape.contains(&0) {
            return Err(Error::Shape(format!(
                "shape {shape:?} must have at least one axis and no zero-length axes"
            )));
        }
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::Shape(format!(
                "shape {shape:?} needs {expected} values, got {}",
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Shape(format!(
                "non-finite value {} at flat index {pos}",
                data[pos]
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn from_rows(rows: &[Vec<f32>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::Shape("ragged rows".into()));
        }
        Self::new(vec![rows.len(), cols], rows.concat())
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Self::from_kernel(shape, vec![0.0; n])
    }

    pub fn identity(n: usize) -> Self {
        let mut data = vec![0.0; n * n];
        for i in 0..n {
            data[i * n + i] = 1.0;
        }
        Self::from_kernel(vec![n, n], data)
    }

    /// Kernel outputs skip the full validation; finiteness is still checked
    /// in debug builds.
    pub(crate) fn from_kernel(shape: Vec<usize>, data: Vec<f32>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        debug_assert!(
            data.iter().all(|v| v.is_finite()),
            "kernel produced a non-finite value"
        );
        Self { shape, data }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Size of the trailing axis.
    pub fn last_dim(&self) -> usize {
        *self.shape.last().expect("tensor has at least one axis")
    }

    /// Number of rows when viewed as `[rows × last_dim]`.
    pub fn rows(&self) -> usize {
        self.data.len() / self.last_dim()
    }

    pub fn row(&self, i: usize) -> &[f32] {
        let d = self.last_dim();
        &self.data[i * d..(i + 1) * d]
    }

    pub fn reshape(self, shape: Vec<usize>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != self.data.len() {
            return Err(Error::Shape(format!(
                "cannot reshape {:?} into {shape:?}",
                self.shape
            )));
        }
        Ok(Self {
            shape,
            data: self.data,
        })
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Bitwise equality, distinguishing `0.0` from `-0.0`.
    pub fn bit_eq(&self, other: &Tensor) -> bool {
        self.shape == other.shape
            && self
                .data
                .iter()
                .zip(&other.data)
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> f32 {
        assert_eq!(self.shape, other.shape, "max_abs_diff on different shapes");
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f32::max)
    }
}

fn require_2d(t: &Tensor, what: &str) -> Result<(usize, usize)> {
    match t.shape() {
        [r, c] => Ok((*r, *c)),
        s => Err(Error::Shape(format!("{what} must be 2-D, got {s:?}"))),
    }
}

/// `c[i][j] = Σ_t a[i][t]·b[t][j]` with `t` accumulated in increasing order.
///
/// The loop nest is i-t-j for cache locality; each output element still sees
/// its products added in the same sequence as a naive triple loop.
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (m, k) = require_2d(a, "matmul lhs")?;
    let (k2, n) = require_2d(b, "matmul rhs")?;
    if k != k2 {
        return Err(Error::Shape(format!(
            "matmul inner dimensions disagree: {:?} × {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let mut out = vec![0.0f32; m * n];
    matmul_into(&a.data, &b.data, k, n, &mut out);
    Ok(Tensor::from_kernel(vec![m, n], out))
}

/// `out += a · b` for row-major `a` [rows × k] and `b` [k × n].
pub(crate) fn matmul_into(a: &[f32], b: &[f32], k: usize, n: usize, out: &mut [f32]) {
    #[cfg(target_arch = "x86_64")]
    if std::arch::is_x86_feature_detected!("avx2") {
        // SAFETY: the CPU supports AVX2, checked just above.
        unsafe { matmul_avx2(a, b, k, n, out) };
        return;
    }
    matmul_loop(a, b, k, n, out);
}

// Same loop compiled for wider vectors. Rust never contracts a·b + c into
// an FMA, so each element sees the same roundings as the portable path.
#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2")]
unsafe fn matmul_avx2(a: &[f32], b: &[f32], k: usize, n: usize, out: &mut [f32]) {
    matmul_loop(a, b, k, n, out);
}

#[inline(always)]
fn matmul_loop(a: &[f32], b: &[f32], k: usize, n: usize, out: &mut [f32]) {
    if n == 0 {
        return;
    }
    for (a_row, out_row) in a.chunks_exact(k.max(1)).zip(out.chunks_exact_mut(n)) {
        for (&av, b_row) in a_row.iter().zip(b.chunks_exact(n)) {
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o += av * bv;
            }
        }
    }
}

pub fn transpose(a: &Tensor) -> Result<Tensor> {
    let (m, n) = require_2d(a, "transpose input")?;
    let mut out = vec![0.0f32; m * n];
    for i in 0..m {
        for j in 0..n {
            out[j * m + i] = a.data[i * n + j];
        }
    }
    Ok(Tensor::from_kernel(vec![n, m], out))
}

/// Stacks 2-D tensors with a shared column count along the row axis.
pub fn concat_rows(parts: &[&Tensor]) -> Result<Tensor> {
    let first = parts
        .first()
        .ok_or_else(|| Error::Argument("concat_rows needs at least one tensor".into()))?;
    let (_, cols) = require_2d(first, "concat_rows input")?;
    let mut rows = 0;
    let mut data = Vec::new();
    for p in parts {
        let (r, c) = require_2d(p, "concat_rows input")?;
        if c != cols {
            return Err(Error::Shape(format!(
                "concat_rows column mismatch: {:?} vs {:?}",
                first.shape(),
                p.shape()
            )));
        }
        rows += r;
        data.extend_from_slice(p.data());
    }
    Ok(Tensor::from_kernel(vec![rows, cols], data))
}

/// Softmax of one row, written into `out`. Exponentials and the normaliser
/// are computed in `f64`.
pub(crate) fn softmax_into(row: &[f32], out: &mut [f32]) {
    let max = row.iter().copied().fold(f32::NEG_INFINITY, f32::max) as f64;
    let exps: Vec<f64> = row.iter().map(|&v| (v as f64 - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    for (o, e) in out.iter_mut().zip(exps) {
        *o = (e / sum) as f32;
    }
}

/// Softmax along the last axis.
pub fn softmax(v: &Tensor) -> Result<Tensor> {
    let n = v.last_dim();
    if n == 0 {
        return Err(Error::Shape("softmax over an empty axis".into()));
    }
    let mut out = vec![0.0f32; v.len()];
    for (row, o) in v.data.chunks_exact(n).zip(out.chunks_exact_mut(n)) {
        softmax_into(row, o);
    }
    Ok(Tensor::from_kernel(v.shape.clone(), out))
}

/// Log-softmax of a single row, returned in `f64`.
pub fn log_softmax(row: &[f32]) -> Result<Vec<f64>> {
    if row.is_empty() {
        return Err(Error::Shape("log_softmax over an empty axis".into()));
    }
    let max = row.iter().copied().fold(f32::NEG_INFINITY, f32::max) as f64;
    let sum: f64 = row.iter().map(|&v| (v as f64 - max).exp()).sum();
    let norm = max + sum.ln();
    Ok(row.iter().map(|&v| v as f64 - norm).collect())
}

/// `out[i] = x[i]·weight[i] / sqrt(mean(x²) + eps)` over the last axis.
pub fn rms_norm(x: &Tensor, weight: &Tensor, eps: f32) -> Result<Tensor> {
    let d = x.last_dim();
    if weight.shape() != [d] {
        return Err(Error::Shape(format!(
            "rms_norm weight {:?} does not match input {:?}",
            weight.shape(),
            x.shape()
        )));
    }
    let mut out = vec![0.0f32; x.len()];
    for (row, o) in x.data.chunks_exact(d).zip(out.chunks_exact_mut(d)) {
        let mean_sq = row.iter().map(|&v| (v as f64) * (v as f64)).sum::<f64>() / d as f64;
        let inv = 1.0 / (mean_sq + eps as f64).sqrt();
        for ((o, &v), &w) in o.iter_mut().zip(row).zip(&weight.data) {
            *o = if inv.is_finite() {
                (v as f64 * inv) as f32 * w
            } else {
                // all-zero row with eps = 0
                0.0
            };
        }
    }
    Ok(Tensor::from_kernel(x.shape.clone(), out))
}

/// Max-shifted `log Σ exp(v_i)`.
pub fn log_sum_exp(v: &[f64]) -> Result<f64> {
    if v.is_empty() {
        return Err(Error::Argument("log_sum_exp of an empty sequence".into()));
    }
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return Ok(max);
    }
    let sum: f64 = v.iter().map(|&x| (x - max).exp()).sum();
    Ok(max + sum.ln())
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Relu,
    /// tanh approximation
    Gelu,
}

impl Activation {
    pub fn apply(self, x: f32) -> f32 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Gelu => {
                let x = x as f64;
                let c = (2.0 / std::f64::consts::PI).sqrt();
                (0.5 * x * (1.0 + (c * (x + 0.044715 * x * x * x)).tanh())) as f32
            }
        }
    }

    pub fn apply_in_place(self, t: &mut Tensor) {
        for v in &mut t.data {
            *v = self.apply(*v);
        }
    }
}

/// Elementwise `a + b` for equal shapes.
pub fn add(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.shape != b.shape {
        return Err(Error::Shape(format!(
            "add shape mismatch: {:?} vs {:?}",
            a.shape, b.shape
        )));
    }
    let data = a.data.iter().zip(&b.data).map(|(x, y)| x + y).collect();
    Ok(Tensor::from_kernel(a.shape.clone(), data))
}
