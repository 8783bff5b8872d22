//! Dense numeric substrate shared by every model in the crate.
//!
//! Samples are stored one per column, so a layer reads literally as
//! `W x + b` with `W` of shape `(out, in)` and `x` of shape `(in, n)`.
//! Everything here is a pure function of its inputs.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense row-major matrix of `f64`.
#[derive(Clone, PartialEq)]
pub struct RealMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl fmt::Debug for RealMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "RealMatrix({}x{})", self.rows, self.cols)?;
        if self.data.len() <= 16 {
            write!(f, " {:?}", self.data)?;
        }
        Ok(())
    }
}

impl RealMatrix {
    /// Builds a matrix from row-major values, rejecting wrong lengths and non-finite entries.
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::shape(
                "RealMatrix::new",
                (rows, cols),
                (data.len(), 1),
            ));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!(
                "entry ({}, {}) = {}",
                pos / cols.max(1),
                pos % cols.max(1),
                data[pos]
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::filled(rows, cols, 0.0)
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        Self {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    /// Column vector (`len x 1`).
    pub fn column(values: Vec<f64>) -> Result<Self> {
        let n = values.len();
        Self::new(n, 1, values)
    }

    pub fn from_rows(rows: &[&[f64]]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, |row| row.len());
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            if row.len() != c {
                return Err(Error::shape(
                    "RealMatrix::from_rows",
                    (r, c),
                    (1, row.len()),
                ));
            }
            data.extend_from_slice(row);
        }
        Self::new(r, c, data)
    }

    /// Builds a matrix whose columns are the given vectors.
    pub fn from_columns<C: AsRef<[f64]>>(columns: &[C]) -> Result<Self> {
        let n = columns.len();
        let r = columns.first().map_or(0, |c| c.as_ref().len());
        let mut m = Self::zeros(r, n);
        for (j, col) in columns.iter().map(AsRef::as_ref).enumerate() {
            if col.len() != r {
                return Err(Error::shape(
                    "RealMatrix::from_columns",
                    (r, n),
                    (col.len(), 1),
                ));
            }
            for (i, v) in col.iter().enumerate() {
                m.data[i * n + j] = *v;
            }
        }
        m.check_finite("from_columns")?;
        Ok(m)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    /// Mutable view of the raw values. Callers must keep entries finite.
    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, value: f64) {
        self.data[i * self.cols + j] = value;
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn column_values(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self.get(i, j)).collect()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub(crate) fn check_finite(&self, op: &str) -> Result<()> {
        if self.is_finite() {
            Ok(())
        } else {
            Err(Error::NonFinite(format!(
                "{op} produced a non-finite entry"
            )))
        }
    }

    pub fn transpose(&self) -> Self {
        let mut t = Self::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t.data[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        t
    }

    /// `self * other`.
    pub fn matmul(&self, other: &Self) -> Result<Self> {
        if self.cols != other.rows {
            return Err(Error::shape("matmul", self.shape(), other.shape()));
        }
        let (m, k, n) = (self.rows, self.cols, other.cols);
        let mut out = Self::zeros(m, n);
        for i in 0..m {
            let out_row = &mut out.data[i * n..(i + 1) * n];
            for p in 0..k {
                let a = self.data[i * k + p];
                if a == 0.0 {
                    continue;
                }
                let b_row = &other.data[p * n..(p + 1) * n];
                for (o, b) in out_row.iter_mut().zip(b_row) {
                    *o += a * b;
                }
            }
        }
        Ok(out)
    }

    /// `selfᵀ * other` without materializing the transpose.
    pub fn matmul_tn(&self, other: &Self) -> Result<Self> {
        if self.rows != other.rows {
            return Err(Error::shape("matmul_tn", self.shape(), other.shape()));
        }
        let (k, m, n) = (self.rows, self.cols, other.cols);
        let mut out = Self::zeros(m, n);
        for p in 0..k {
            let a_row = &self.data[p * m..(p + 1) * m];
            let b_row = &other.data[p * n..(p + 1) * n];
            for (i, a) in a_row.iter().enumerate() {
                if *a == 0.0 {
                    continue;
                }
                let out_row = &mut out.data[i * n..(i + 1) * n];
                for (o, b) in out_row.iter_mut().zip(b_row) {
                    *o += a * b;
                }
            }
        }
        Ok(out)
    }

    /// `self * otherᵀ` without materializing the transpose.
    pub fn matmul_nt(&self, other: &Self) -> Result<Self> {
        if self.cols != other.cols {
            return Err(Error::shape("matmul_nt", self.shape(), other.shape()));
        }
        let (m, k, n) = (self.rows, self.cols, other.rows);
        let mut out = Self::zeros(m, n);
        for i in 0..m {
            let a_row = &self.data[i * k..(i + 1) * k];
            for j in 0..n {
                let b_row = &other.data[j * k..(j + 1) * k];
                out.data[i * n + j] = a_row.iter().zip(b_row).map(|(a, b)| a * b).sum();
            }
        }
        Ok(out)
    }

    fn zip_with(
        &self,
        other: &Self,
        op: &'static str,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Self> {
        if self.shape() != other.shape() {
            return Err(Error::shape(op, self.shape(), other.shape()));
        }
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| f(*a, *b))
            .collect();
        Ok(Self {
            rows: self.rows,
            cols: self.cols,
            data,
        })
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, "add", |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, "sub", |a, b| a - b)
    }

    pub fn hadamard(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, "hadamard", |a, b| a * b)
    }

    pub fn add_assign(&mut self, other: &Self) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::shape("add_assign", self.shape(), other.shape()));
        }
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    pub fn scale(&self, alpha: f64) -> Self {
        self.map(|v| v * alpha)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| f(*v)).collect(),
        }
    }

    /// Sum over columns: a `rows x 1` vector. Used for bias gradients.
    pub fn row_sums(&self) -> Self {
        let data = (0..self.rows).map(|i| self.row(i).iter().sum()).collect();
        Self {
            rows: self.rows,
            cols: 1,
            data,
        }
    }

    pub fn frobenius_sq(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    pub fn frobenius(&self) -> f64 {
        self.frobenius_sq().sqrt()
    }

    /// Keeps the listed columns, in the listed order.
    pub fn select_columns(&self, indices: &[usize]) -> Self {
        let mut out = Self::zeros(self.rows, indices.len());
        for (dst, &src) in indices.iter().enumerate() {
            for i in 0..self.rows {
                out.data[i * indices.len() + dst] = self.data[i * self.cols + src];
            }
        }
        out
    }

    /// Contiguous column range `[start, end)`.
    pub fn column_range(&self, start: usize, end: usize) -> Self {
        let idx: Vec<usize> = (start..end).collect();
        self.select_columns(&idx)
    }

    /// Concatenates matrices side by side (sample axis).
    pub fn hconcat(parts: &[&Self]) -> Result<Self> {
        let rows = parts.first().map_or(0, |m| m.rows);
        let cols: usize = parts.iter().map(|m| m.cols).sum();
        let mut out = Self::zeros(rows, cols);
        let mut offset = 0;
        for part in parts {
            if part.rows != rows {
                return Err(Error::shape("hconcat", (rows, cols), part.shape()));
            }
            for i in 0..rows {
                out.data[i * cols + offset..i * cols + offset + part.cols]
                    .copy_from_slice(part.row(i));
            }
            offset += part.cols;
        }
        Ok(out)
    }

    pub fn max_abs_diff(&self, other: &Self) -> Result<f64> {
        if self.shape() != other.shape() {
            return Err(Error::shape("max_abs_diff", self.shape(), other.shape()));
        }
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max))
    }
}

/// Element-wise nonlinearity used by encoder and decoder layers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ActivationKind {
    Sigmoid,
    Tanh,
    Identity,
}

// Largest f64 strictly below 1.
const ONE_MINUS_ULP: f64 = 1.0 - f64::EPSILON / 2.0;

/// Logistic function, kept strictly inside (0, 1) even where the exact value rounds to 0 or 1.
#[inline]
pub fn sigmoid(z: f64) -> f64 {
    let y = if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    };
    y.clamp(f64::MIN_POSITIVE, ONE_MINUS_ULP)
}

impl ActivationKind {
    #[inline]
    pub fn apply(self, z: f64) -> f64 {
        match self {
            ActivationKind::Sigmoid => sigmoid(z),
            ActivationKind::Tanh => z.tanh(),
            ActivationKind::Identity => z,
        }
    }

    /// Derivative expressed through the activation output `y = f(z)`.
    #[inline]
    pub fn derivative_from_output(self, y: f64) -> f64 {
        match self {
            ActivationKind::Sigmoid => y * (1.0 - y),
            ActivationKind::Tanh => 1.0 - y * y,
            ActivationKind::Identity => 1.0,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ActivationKind::Sigmoid => "sigmoid",
            ActivationKind::Tanh => "tanh",
            ActivationKind::Identity => "identity",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "sigmoid" => Some(ActivationKind::Sigmoid),
            "tanh" => Some(ActivationKind::Tanh),
            "identity" => Some(ActivationKind::Identity),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossKind {
    SquaredError,
    CrossEntropy,
}

/// `W x + b`, with `b` broadcast across sample columns.
pub fn affine(w: &RealMatrix, x: &RealMatrix, b: &[f64]) -> Result<RealMatrix> {
    if w.cols() != x.rows() {
        return Err(Error::shape("affine", w.shape(), x.shape()));
    }
    if b.len() != w.rows() {
        return Err(Error::shape("affine bias", w.shape(), (b.len(), 1)));
    }
    let mut out = w.matmul(x)?;
    let n = out.cols();
    for (i, bias) in b.iter().enumerate() {
        for v in &mut out.as_mut_slice()[i * n..(i + 1) * n] {
            *v += bias;
        }
    }
    Ok(out)
}

/// `Wᵀ h + b`, the tied decoder pre-activation.
pub fn affine_transposed(w: &RealMatrix, h: &RealMatrix, b: &[f64]) -> Result<RealMatrix> {
    if w.rows() != h.rows() {
        return Err(Error::shape("affine_transposed", w.shape(), h.shape()));
    }
    if b.len() != w.cols() {
        return Err(Error::shape(
            "affine_transposed bias",
            w.shape(),
            (b.len(), 1),
        ));
    }
    let mut out = w.matmul_tn(h)?;
    let n = out.cols();
    for (i, bias) in b.iter().enumerate() {
        for v in &mut out.as_mut_slice()[i * n..(i + 1) * n] {
            *v += bias;
        }
    }
    Ok(out)
}

pub fn activate(kind: ActivationKind, z: &RealMatrix) -> RealMatrix {
    z.map(|v| kind.apply(v))
}

/// Mean over samples (columns) of the per-sample loss.
pub fn loss(kind: LossKind, x: &RealMatrix, r: &RealMatrix) -> Result<f64> {
    if x.shape() != r.shape() {
        return Err(Error::shape("loss", x.shape(), r.shape()));
    }
    let n = x.cols();
    if n == 0 {
        return Err(Error::EmptyBatch);
    }
    let total = match kind {
        LossKind::SquaredError => x
            .as_slice()
            .iter()
            .zip(r.as_slice())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>(),
        LossKind::CrossEntropy => {
            let mut acc = 0.0;
            for (xi, ri) in x.as_slice().iter().zip(r.as_slice()) {
                if !(*ri > 0.0 && *ri < 1.0) {
                    return Err(Error::Domain(format!(
                        "cross-entropy needs reconstructions in (0, 1), got {ri}"
                    )));
                }
                if !(0.0..=1.0).contains(xi) {
                    return Err(Error::Domain(format!(
                        "cross-entropy needs targets in [0, 1], got {xi}"
                    )));
                }
                acc -= xi * ri.ln() + (1.0 - xi) * (1.0 - ri).ln();
            }
            acc
        }
    };
    Ok(total / n as f64)
}

/// Column-wise softmax with max subtraction.
pub fn softmax(logits: &RealMatrix) -> RealMatrix {
    let (rows, cols) = logits.shape();
    let mut out = RealMatrix::zeros(rows, cols);
    for j in 0..cols {
        let max = (0..rows)
            .map(|i| logits.get(i, j))
            .fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for i in 0..rows {
            let e = (logits.get(i, j) - max).exp();
            out.set(i, j, e);
            sum += e;
        }
        for i in 0..rows {
            out.set(i, j, out.get(i, j) / sum);
        }
    }
    out
}

/// Plain gradient descent: `p <- p - lr * g` for every aligned pair.
pub fn sgd_step<'a>(
    params: impl IntoIterator<Item = &'a mut RealMatrix>,
    grads: &[RealMatrix],
    lr: f64,
) -> Result<()> {
    if !(lr > 0.0 && lr.is_finite()) {
        return Err(Error::InvalidConfig(format!(
            "learning rate must be positive, got {lr}"
        )));
    }
    let params: Vec<&mut RealMatrix> = params.into_iter().collect();
    if params.len() != grads.len() {
        return Err(Error::shape(
            "sgd_step",
            (params.len(), 1),
            (grads.len(), 1),
        ));
    }
    for (p, g) in params.iter().zip(grads) {
        if p.shape() != g.shape() {
            return Err(Error::shape("sgd_step", p.shape(), g.shape()));
        }
    }
    for (p, g) in params.into_iter().zip(grads) {
        for (pv, gv) in p.data.iter_mut().zip(&g.data) {
            *pv -= lr * gv;
        }
        p.check_finite("sgd_step")?;
    }
    Ok(())
}

pub const DEFAULT_FD_STEP: f64 = 1e-5;

/// Central-difference gradient of `f` at `params`, one coordinate at a time.
pub fn finite_difference_grad<F>(mut f: F, params: &[RealMatrix], h: f64) -> Result<Vec<RealMatrix>>
where
    F: FnMut(&[RealMatrix]) -> f64,
{
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::InvalidConfig(format!(
            "finite-difference step must be positive, got {h}"
        )));
    }
    let mut work: Vec<RealMatrix> = params.to_vec();
    let mut grads: Vec<RealMatrix> = params
        .iter()
        .map(|p| RealMatrix::zeros(p.rows(), p.cols()))
        .collect();
    for t in 0..work.len() {
        for k in 0..work[t].len() {
            let orig = work[t].data[k];
            work[t].data[k] = orig + h;
            let plus = f(&work);
            work[t].data[k] = orig - h;
            let minus = f(&work);
            work[t].data[k] = orig;
            if !plus.is_finite() || !minus.is_finite() {
                return Err(Error::NonFinite(format!(
                    "objective evaluation at parameter {t}, coordinate {k}"
                )));
            }
            grads[t].data[k] = (plus - minus) / (2.0 * h);
        }
    }
    Ok(grads)
}

/// Below this magnitude gradient entries are compared on an absolute scale,
/// since central differences carry ~1e-11 of rounding noise at h = 1e-5.
pub const RELATIVE_ERROR_FLOOR: f64 = 1e-4;

/// Largest element-wise `|a - b| / max(|a|, |b|, RELATIVE_ERROR_FLOOR)` over aligned collections.
pub fn max_relative_error(a: &[RealMatrix], b: &[RealMatrix]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::shape(
            "max_relative_error",
            (a.len(), 1),
            (b.len(), 1),
        ));
    }
    let mut worst = 0.0f64;
    for (x, y) in a.iter().zip(b) {
        if x.shape() != y.shape() {
            return Err(Error::shape("max_relative_error", x.shape(), y.shape()));
        }
        for (u, v) in x.as_slice().iter().zip(y.as_slice()) {
            let denom = u.abs().max(v.abs()).max(RELATIVE_ERROR_FLOOR);
            worst = worst.max((u - v).abs() / denom);
        }
    }
    Ok(worst)
}
