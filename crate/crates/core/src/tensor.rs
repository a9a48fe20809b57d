//! Dense multi-index tensors over a `4n`-dimensional real vector space and the
//! metric bundle used to contract them.
//!
//! Components are stored row-major by slot order: the last slot varies fastest.
//! A (1,2)-tensor describing the covariant derivative of an endomorphism field,
//! `(x, y) ↦ (∇_x J) y`, uses the slot layout `(x, y, value)` with variance
//! `[Co, Co, Contra]`; see [`DenseTensor::from_endomorphisms`].

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::Serialize;

use crate::error::{Error, Result};

/// Default tolerance for max-abs-relative equality checks.
pub const DEFAULT_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Variance {
    Co,
    Contra,
}

pub(crate) fn check_dim(dim: usize) -> Result<()> {
    if dim < 4 || dim % 4 != 0 {
        return Err(Error::Dimension(format!(
            "dimension must be a positive multiple of 4, got {dim}"
        )));
    }
    Ok(())
}

/// Max-abs difference normalised by `max(floor, |a|, |b|)`.
pub fn rel_residual(diff_max: f64, lhs_max: f64, rhs_max: f64, floor: f64) -> f64 {
    diff_max / floor.max(lhs_max).max(rhs_max)
}

pub(crate) fn max_abs(values: &[f64]) -> f64 {
    values.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
}

pub(crate) fn matrix_max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()))
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseTensor {
    dim: usize,
    variance: Vec<Variance>,
    data: Vec<f64>,
}

impl DenseTensor {
    pub fn zeros(dim: usize, variance: &[Variance]) -> Result<Self> {
        check_dim(dim)?;
        Ok(Self {
            dim,
            variance: variance.to_vec(),
            data: vec![0.0; dim.pow(variance.len() as u32)],
        })
    }

    pub fn covariant_zeros(dim: usize, rank: usize) -> Result<Self> {
        Self::zeros(dim, &vec![Variance::Co; rank])
    }

    pub fn from_vec(dim: usize, variance: &[Variance], data: Vec<f64>) -> Result<Self> {
        check_dim(dim)?;
        let expected = dim.pow(variance.len() as u32);
        if data.len() != expected {
            return Err(Error::Shape(format!(
                "expected {expected} components for rank {} on dim {dim}, got {}",
                variance.len(),
                data.len()
            )));
        }
        Ok(Self {
            dim,
            variance: variance.to_vec(),
            data,
        })
    }

    /// Builds a tensor by evaluating `f` on every multi-index in storage order.
    pub fn from_fn(
        dim: usize,
        variance: &[Variance],
        mut f: impl FnMut(&[usize]) -> f64,
    ) -> Result<Self> {
        check_dim(dim)?;
        let rank = variance.len();
        let len = dim.pow(rank as u32);
        let mut idx = vec![0usize; rank];
        let mut data = Vec::with_capacity(len);
        for _ in 0..len {
            data.push(f(&idx));
            for s in (0..rank).rev() {
                idx[s] += 1;
                if idx[s] < dim {
                    break;
                }
                idx[s] = 0;
            }
        }
        Ok(Self {
            dim,
            variance: variance.to_vec(),
            data,
        })
    }

    pub fn from_matrix(m: &DMatrix<f64>, variance: [Variance; 2]) -> Result<Self> {
        if m.nrows() != m.ncols() {
            return Err(Error::Shape(format!("{}x{} matrix", m.nrows(), m.ncols())));
        }
        Self::from_fn(m.nrows(), &variance, |i| m[(i[0], i[1])])
    }

    pub fn from_vector(v: &DVector<f64>, variance: Variance) -> Result<Self> {
        Self::from_vec(v.len(), &[variance], v.iter().copied().collect())
    }

    /// Packs `mats[x]`, the endomorphism `(∇_{e_x} J)`, into the `(x, y, value)` layout.
    pub fn from_endomorphisms(mats: &[DMatrix<f64>]) -> Result<Self> {
        let dim = mats.len();
        if mats.iter().any(|m| m.nrows() != dim || m.ncols() != dim) {
            return Err(Error::Shape(
                "endomorphism list must hold dim matrices of size dim x dim".into(),
            ));
        }
        Self::from_fn(
            dim,
            &[Variance::Co, Variance::Co, Variance::Contra],
            |i| mats[i[0]][(i[2], i[1])],
        )
    }

    /// Inverse of [`from_endomorphisms`](Self::from_endomorphisms) for one direction `x`.
    pub fn endomorphism_at(&self, x: usize) -> Result<DMatrix<f64>> {
        if self.variance != [Variance::Co, Variance::Co, Variance::Contra] {
            return Err(Error::Variance(
                "expected (x, y, value) layout with variance [Co, Co, Contra]".into(),
            ));
        }
        let d = self.dim;
        Ok(DMatrix::from_fn(d, d, |k, j| self.get(&[x, j, k])))
    }

    pub fn endomorphisms(&self) -> Result<Vec<DMatrix<f64>>> {
        (0..self.dim).map(|x| self.endomorphism_at(x)).collect()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn rank(&self) -> usize {
        self.variance.len()
    }

    pub fn variance(&self) -> &[Variance] {
        &self.variance
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    fn offset(&self, idx: &[usize]) -> usize {
        debug_assert_eq!(idx.len(), self.rank());
        idx.iter().fold(0, |acc, &i| acc * self.dim + i)
    }

    pub fn get(&self, idx: &[usize]) -> f64 {
        self.data[self.offset(idx)]
    }

    pub fn to_matrix(&self) -> Result<DMatrix<f64>> {
        if self.rank() != 2 {
            return Err(Error::Shape(format!("rank {} is not a matrix", self.rank())));
        }
        let d = self.dim;
        Ok(DMatrix::from_row_slice(d, d, &self.data))
    }

    pub fn to_vector(&self) -> Result<DVector<f64>> {
        if self.rank() != 1 {
            return Err(Error::Shape(format!("rank {} is not a vector", self.rank())));
        }
        Ok(DVector::from_column_slice(&self.data))
    }

    pub fn max_abs(&self) -> f64 {
        max_abs(&self.data)
    }

    fn check_same_shape(&self, other: &Self) -> Result<()> {
        if self.dim != other.dim || self.variance != other.variance {
            return Err(Error::Shape(format!(
                "dim {} {:?} vs dim {} {:?}",
                self.dim, self.variance, other.dim, other.variance
            )));
        }
        Ok(())
    }

    pub fn max_abs_diff(&self, other: &Self) -> Result<f64> {
        self.check_same_shape(other)?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .fold(0.0_f64, |m, (a, b)| m.max((a - b).abs())))
    }

    /// `max|a - b| / max(1, max|a|, max|b|)`.
    pub fn rel_diff(&self, other: &Self) -> Result<f64> {
        let diff = self.max_abs_diff(other)?;
        Ok(rel_residual(diff, self.max_abs(), other.max_abs(), 1.0))
    }

    pub fn approx_eq(&self, other: &Self, tol: f64) -> bool {
        self.rel_diff(other).map(|r| r <= tol).unwrap_or(false)
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self {
            dim: self.dim,
            variance: self.variance.clone(),
            data: self.data.iter().map(|v| c * v).collect(),
        }
    }

    /// `a * self + b * other`.
    pub fn combine(&self, a: f64, other: &Self, b: f64) -> Result<Self> {
        self.check_same_shape(other)?;
        Ok(Self {
            dim: self.dim,
            variance: self.variance.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(x, y)| a * x + b * y)
                .collect(),
        })
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.combine(1.0, other, 1.0)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.combine(1.0, other, -1.0)
    }

    fn check_slot(&self, slot: usize) -> Result<()> {
        if slot >= self.rank() {
            return Err(Error::SlotOutOfRange {
                slot,
                rank: self.rank(),
            });
        }
        Ok(())
    }

    /// Reorders slots: result slot `s` is source slot `perm[s]`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        let rank = self.rank();
        let mut seen = vec![false; rank];
        if perm.len() != rank || perm.iter().any(|&p| p >= rank || std::mem::replace(&mut seen[p], true)) {
            return Err(Error::Shape(format!("{perm:?} is not a permutation of {rank} slots")));
        }
        let variance: Vec<Variance> = perm.iter().map(|&p| self.variance[p]).collect();
        let mut src = vec![0usize; rank];
        Self::from_fn(self.dim, &variance, |idx| {
            for (s, &p) in perm.iter().enumerate() {
                src[p] = idx[s];
            }
            self.get(&src)
        })
    }

    fn swapped(&self, a: usize, b: usize) -> Result<Self> {
        self.check_slot(a)?;
        self.check_slot(b)?;
        let mut perm: Vec<usize> = (0..self.rank()).collect();
        perm.swap(a, b);
        self.permuted(&perm)
    }

    /// `½ (T − T∘swap(a,b))`; exact antisymmetry in the pair afterwards.
    pub fn antisymmetrized(&self, a: usize, b: usize) -> Result<Self> {
        self.check_slot(a)?;
        self.check_slot(b)?;
        if self.variance[a] != self.variance[b] {
            return Err(Error::Variance("cannot antisymmetrize mixed slots".into()));
        }
        let s = self.swapped(a, b)?;
        let mut out = self.combine(0.5, &s, -0.5)?;
        // Force bitwise antisymmetry: copy the negated value from the canonical half.
        out.enforce_pair(a, b, -1.0);
        Ok(out)
    }

    pub fn symmetrized(&self, a: usize, b: usize) -> Result<Self> {
        self.check_slot(a)?;
        self.check_slot(b)?;
        if self.variance[a] != self.variance[b] {
            return Err(Error::Variance("cannot symmetrize mixed slots".into()));
        }
        let s = self.swapped(a, b)?;
        let mut out = self.combine(0.5, &s, 0.5)?;
        out.enforce_pair(a, b, 1.0);
        Ok(out)
    }

    fn enforce_pair(&mut self, a: usize, b: usize, sign: f64) {
        let rank = self.rank();
        let dim = self.dim;
        let mut idx = vec![0usize; rank];
        for off in 0..self.data.len() {
            let mut rem = off;
            for s in (0..rank).rev() {
                idx[s] = rem % dim;
                rem /= dim;
            }
            if idx[a] < idx[b] {
                idx.swap(a, b);
                let other = self.offset(&idx);
                self.data[other] = sign * self.data[off];
            } else if idx[a] == idx[b] && sign < 0.0 {
                self.data[off] = 0.0;
            }
        }
    }

    /// Evaluates covariant slot `slot` on `M e_z`: `T'(…, z, …) = Σ_a T(…, a, …) M[a, z]`.
    pub fn compose_slot(&self, slot: usize, m: &DMatrix<f64>) -> Result<Self> {
        self.check_slot(slot)?;
        if self.variance[slot] != Variance::Co {
            return Err(Error::Variance(format!("slot {slot} is not covariant")));
        }
        if m.nrows() != self.dim || m.ncols() != self.dim {
            return Err(Error::Shape("endomorphism dimension mismatch".into()));
        }
        let mut src = vec![0usize; self.rank()];
        Self::from_fn(self.dim, &self.variance, |idx| {
            src.copy_from_slice(idx);
            let z = idx[slot];
            let mut acc = 0.0;
            for a in 0..self.dim {
                let w = m[(a, z)];
                if w != 0.0 {
                    src[slot] = a;
                    acc += self.get(&src) * w;
                }
            }
            acc
        })
    }
}

/// A nondegenerate symmetric bilinear form with its inverse and signature.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricBundle {
    g: DMatrix<f64>,
    g_inv: DMatrix<f64>,
    signature: (usize, usize),
    scale: f64,
}

impl MetricBundle {
    pub fn new(g: DMatrix<f64>) -> Result<Self> {
        if g.nrows() != g.ncols() {
            return Err(Error::Shape(format!("metric is {}x{}", g.nrows(), g.ncols())));
        }
        let dim = g.nrows();
        check_dim(dim)?;
        let scale = matrix_max_abs(&g);
        let asym = matrix_max_abs(&(&g - g.transpose()));
        if asym > 1e-12 * scale.max(1.0) {
            return Err(Error::NonSymmetricMetric(asym));
        }
        let g = (&g + g.transpose()) * 0.5;
        let threshold = 1e-12 * scale.powi(dim as i32);
        let lu = g.clone().full_piv_lu();
        let det = lu.determinant();
        if !(det.abs() > threshold) {
            return Err(Error::DegenerateMetric { det, threshold });
        }
        let g_inv = lu
            .try_inverse()
            .ok_or(Error::DegenerateMetric { det, threshold })?;
        let g_inv = (&g_inv + g_inv.transpose()) * 0.5;
        let eig = SymmetricEigen::new(g.clone());
        let cutoff = 1e-12 * scale;
        let p = eig.eigenvalues.iter().filter(|&&l| l > cutoff).count();
        let q = eig.eigenvalues.iter().filter(|&&l| l < -cutoff).count();
        if p + q != dim {
            return Err(Error::DegenerateMetric { det, threshold });
        }
        Ok(Self {
            g,
            g_inv,
            signature: (p, q),
            scale,
        })
    }

    pub fn dim(&self) -> usize {
        self.g.nrows()
    }

    /// `n` with `dim = 4n`.
    pub fn n(&self) -> usize {
        self.dim() / 4
    }

    pub fn g(&self) -> &DMatrix<f64> {
        &self.g
    }

    pub fn g_inv(&self) -> &DMatrix<f64> {
        &self.g_inv
    }

    pub fn signature(&self) -> (usize, usize) {
        self.signature
    }

    pub fn is_neutral(&self) -> bool {
        self.signature.0 == self.signature.1
    }

    /// `max |g_ij|`, the natural floor for residuals of tensors that scale with `g`.
    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn g_tensor(&self) -> DenseTensor {
        DenseTensor::from_matrix(&self.g, [Variance::Co, Variance::Co]).expect("validated shape")
    }

    pub fn g_inv_tensor(&self) -> DenseTensor {
        DenseTensor::from_matrix(&self.g_inv, [Variance::Contra, Variance::Contra])
            .expect("validated shape")
    }

    pub fn inner(&self, x: &DVector<f64>, y: &DVector<f64>) -> f64 {
        (x.transpose() * &self.g * y)[(0, 0)]
    }

    /// Vector with `g(Ω, ·) = ω`.
    pub fn raise_covector(&self, omega: &DVector<f64>) -> DVector<f64> {
        &self.g_inv * omega
    }

    pub fn lower_vector(&self, v: &DVector<f64>) -> DVector<f64> {
        &self.g * v
    }
}

fn check_metric_dim(t: &DenseTensor, metric: &MetricBundle) -> Result<()> {
    if t.dim() != metric.dim() {
        return Err(Error::Shape(format!(
            "tensor dim {} vs metric dim {}",
            t.dim(),
            metric.dim()
        )));
    }
    Ok(())
}

/// Contracts slots `a` and `b`: with `g^{ij}` when both are covariant, with
/// `g_{ij}` when both are contravariant, and as a plain trace otherwise.
pub fn contract(t: &DenseTensor, a: usize, b: usize, metric: &MetricBundle) -> Result<DenseTensor> {
    let rank = t.rank();
    if rank < 2 {
        return Err(Error::RankTooSmall { needed: 2, rank });
    }
    t.check_slot(a)?;
    t.check_slot(b)?;
    if a == b {
        return Err(Error::Shape("contracted slots must be distinct".into()));
    }
    check_metric_dim(t, metric)?;
    let d = t.dim();
    let weight = match (t.variance()[a], t.variance()[b]) {
        (Variance::Co, Variance::Co) => metric.g_inv().clone(),
        (Variance::Contra, Variance::Contra) => metric.g().clone(),
        _ => DMatrix::identity(d, d),
    };
    let keep: Vec<usize> = (0..rank).filter(|&s| s != a && s != b).collect();
    let variance: Vec<Variance> = keep.iter().map(|&s| t.variance()[s]).collect();
    let mut src = vec![0usize; rank];
    DenseTensor::from_fn(d, &variance, |idx| {
        for (k, &s) in keep.iter().enumerate() {
            src[s] = idx[k];
        }
        let mut acc = 0.0;
        for i in 0..d {
            for j in 0..d {
                let w = weight[(i, j)];
                if w != 0.0 {
                    src[a] = i;
                    src[b] = j;
                    acc += w * t.get(&src);
                }
            }
        }
        acc
    })
}

/// Full contraction of a rank-2 tensor to a scalar, weighted as in [`contract`].
pub fn scalar_contract(t: &DenseTensor, metric: &MetricBundle) -> Result<f64> {
    if t.rank() != 2 {
        return Err(Error::Shape(format!("scalar contraction needs rank 2, got {}", t.rank())));
    }
    Ok(contract(t, 0, 1, metric)?.data()[0])
}

fn change_slot(
    t: &DenseTensor,
    slot: usize,
    metric: &MetricBundle,
    from: Variance,
    to: Variance,
) -> Result<DenseTensor> {
    t.check_slot(slot)?;
    check_metric_dim(t, metric)?;
    if t.variance()[slot] != from {
        return Err(Error::Variance(format!("slot {slot} is not {from:?}")));
    }
    let m = match to {
        Variance::Contra => metric.g_inv(),
        Variance::Co => metric.g(),
    };
    let mut variance = t.variance().to_vec();
    variance[slot] = to;
    let mut src = vec![0usize; t.rank()];
    DenseTensor::from_fn(t.dim(), &variance, |idx| {
        src.copy_from_slice(idx);
        let k = idx[slot];
        let mut acc = 0.0;
        for i in 0..t.dim() {
            let w = m[(k, i)];
            if w != 0.0 {
                src[slot] = i;
                acc += w * t.get(&src);
            }
        }
        acc
    })
}

pub fn raise(t: &DenseTensor, slot: usize, metric: &MetricBundle) -> Result<DenseTensor> {
    change_slot(t, slot, metric, Variance::Co, Variance::Contra)
}

pub fn lower(t: &DenseTensor, slot: usize, metric: &MetricBundle) -> Result<DenseTensor> {
    change_slot(t, slot, metric, Variance::Contra, Variance::Co)
}

/// `𝔖 t (x, y, z) = t(x,y,z) + t(y,z,x) + t(z,x,y)`.
pub fn cyclic_sum(t: &DenseTensor) -> Result<DenseTensor> {
    if t.rank() != 3 || t.variance().iter().any(|&v| v != Variance::Co) {
        return Err(Error::Shape(format!(
            "cyclic sum needs a covariant rank-3 tensor, got {:?}",
            t.variance()
        )));
    }
    DenseTensor::from_fn(t.dim(), t.variance(), |i| {
        let (x, y, z) = (i[0], i[1], i[2]);
        t.get(&[x, y, z]) + t.get(&[y, z, x]) + t.get(&[z, x, y])
    })
}

/// `g^{ij} g^{kl} g((∇_i J) e_k, (∇_j J) e_l)` for `covj` in the `(x, y, value)` layout.
///
/// The value may be negative, or zero with `covj ≠ 0`, when `g` is indefinite.
pub fn square_norm_nabla_j(covj: &DenseTensor, metric: &MetricBundle) -> Result<f64> {
    if covj.variance() != [Variance::Co, Variance::Co, Variance::Contra] {
        return Err(Error::Variance("expected (x, y, value) layout".into()));
    }
    check_metric_dim(covj, metric)?;
    let f = lower(covj, 2, metric)?;
    let gi = metric.g_inv();
    let d = covj.dim();
    let mut acc = 0.0;
    for i in 0..d {
        for j in 0..d {
            let gij = gi[(i, j)];
            if gij == 0.0 {
                continue;
            }
            for k in 0..d {
                for l in 0..d {
                    let gkl = gi[(k, l)];
                    if gkl == 0.0 {
                        continue;
                    }
                    let mut inner = 0.0;
                    for a in 0..d {
                        inner += covj.get(&[i, k, a]) * f.get(&[j, l, a]);
                    }
                    acc += gij * gkl * inner;
                }
            }
        }
    }
    Ok(acc)
}
