//! Chart-local calculus on a coordinate box.
//!
//! Fields are user closures evaluated at coordinate points. First derivatives
//! use central differences with `FdConfig::step`; curvature uses second
//! derivatives of the metric on the wider `nested_step` stencil, and objects
//! built from curvature or from other derived fields (`∇ρ`, `dω`) are
//! differentiated once more with `outer_step` / `nested_step`. Keeping the
//! three scales apart keeps round-off of the inner stencil from being amplified
//! by the outer one.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::structures::{check_hypercomplex, check_nh_compat, per_alpha, Alpha, HTriple, COMPAT_TOL};
use crate::tensor::{check_dim, contract, lower, matrix_max_abs, DenseTensor, MetricBundle, Variance};

pub type MetricField = Arc<dyn Fn(&[f64]) -> Result<DMatrix<f64>> + Send + Sync>;
pub type TripleField = Arc<dyn Fn(&[f64]) -> Result<HTriple> + Send + Sync>;
pub type ScalarField = Arc<dyn Fn(&[f64]) -> Result<f64> + Send + Sync>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum FdOrder {
    Second,
    Fourth,
}

impl FdOrder {
    pub fn from_int(order: u32) -> Result<Self> {
        match order {
            2 => Ok(FdOrder::Second),
            4 => Ok(FdOrder::Fourth),
            other => Err(Error::Other(format!("finite-difference order must be 2 or 4, got {other}"))),
        }
    }

    pub fn as_int(self) -> u32 {
        match self {
            FdOrder::Second => 2,
            FdOrder::Fourth => 4,
        }
    }

    /// Stencil half-width in units of the step.
    pub fn reach(self) -> f64 {
        match self {
            FdOrder::Second => 1.0,
            FdOrder::Fourth => 2.0,
        }
    }

    /// `(offset, weight)` pairs of the central first-derivative stencil, applied as
    /// `w·(f(p + o h) − f(p − o h)) / h` so that constant fields give exactly zero.
    fn first(self) -> &'static [(f64, f64)] {
        match self {
            FdOrder::Second => &[(1.0, 0.5)],
            FdOrder::Fourth => &[(1.0, 8.0 / 12.0), (2.0, -1.0 / 12.0)],
        }
    }

    /// Pure second-derivative stencil applied as `Σ w·(f(p + o h) + f(p − o h) − 2 f(p)) / h²`.
    fn second(self) -> &'static [(f64, f64)] {
        match self {
            FdOrder::Second => &[(1.0, 1.0)],
            FdOrder::Fourth => &[(1.0, 16.0 / 12.0), (2.0, -1.0 / 12.0)],
        }
    }
}

/// Absolute step sizes for the three differentiation depths.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FdConfig {
    pub order: FdOrder,
    /// First derivatives of the input fields.
    pub step: f64,
    /// Second metric derivatives and derivatives of first-derivative objects.
    pub nested_step: f64,
    /// Derivatives of curvature-level objects.
    pub outer_step: f64,
}

impl FdConfig {
    pub fn for_scale(scale: f64) -> Self {
        Self {
            order: FdOrder::Fourth,
            step: 1e-5 * scale,
            nested_step: 1e-3 * scale,
            outer_step: 1e-2 * scale,
        }
    }

    fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("step", self.step),
            ("nested_step", self.nested_step),
            ("outer_step", self.outer_step),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Other(format!("fd {name} must be positive, got {v}")));
            }
        }
        Ok(())
    }

    fn reach(&self, h: f64) -> f64 {
        self.order.reach() * h
    }
}

/// Which pair of slots of `R` the Ricci trace runs over.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Default)]
pub enum RicciTrace {
    /// `ρ(y, z) = g^{ij} R(e_i, y, z, e_j)`
    #[default]
    FirstLast,
    /// `ρ(y, z) = g^{ij} R(e_i, y, e_j, z)`, the opposite sign.
    FirstThird,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Default)]
pub struct Conventions {
    pub ricci: RicciTrace,
    /// Use `dω(x, y) = ½ {(∇_xω)y − (∇_yω)x}` instead of the unhalved form.
    pub half_exterior: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Domain {
    lo: Vec<f64>,
    hi: Vec<f64>,
}

impl Domain {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        if lo.len() != hi.len() || lo.is_empty() {
            return Err(Error::Shape("domain bounds must have equal, nonzero length".into()));
        }
        if lo.iter().zip(&hi).any(|(a, b)| !(a < b) || !a.is_finite() || !b.is_finite()) {
            return Err(Error::Other("domain must be a nonempty box with lo < hi on every axis".into()));
        }
        Ok(Self { lo, hi })
    }

    pub fn cube(dim: usize, lo: f64, hi: f64) -> Result<Self> {
        Self::new(vec![lo; dim], vec![hi; dim])
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn lo(&self) -> &[f64] {
        &self.lo
    }

    pub fn hi(&self) -> &[f64] {
        &self.hi
    }

    /// Longest side.
    pub fn scale(&self) -> f64 {
        self.lo.iter().zip(&self.hi).fold(0.0_f64, |m, (a, b)| m.max(b - a))
    }

    pub fn center(&self) -> Vec<f64> {
        self.lo.iter().zip(&self.hi).map(|(a, b)| 0.5 * (a + b)).collect()
    }
}

/// A metric field and an almost hypercomplex triple field on a coordinate box.
#[derive(Clone)]
pub struct ChartManifold {
    dim: usize,
    domain: Domain,
    metric: MetricField,
    triple: TripleField,
    fd: FdConfig,
    conventions: Conventions,
}

impl std::fmt::Debug for ChartManifold {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ChartManifold")
            .field("dim", &self.dim)
            .field("domain", &self.domain)
            .field("fd", &self.fd)
            .field("conventions", &self.conventions)
            .finish_non_exhaustive()
    }
}

/// Curvature objects at one point.
#[derive(Debug, Clone)]
pub struct Curvature {
    pub r4: DenseTensor,
    pub ricci: DMatrix<f64>,
    pub tau: f64,
}

/// Everything first- and second-order at one point.
#[derive(Debug, Clone)]
pub struct PointCalculus {
    pub point: Vec<f64>,
    pub metric: MetricBundle,
    pub triple: HTriple,
    /// `Γ^k_{ij}` stored as `(k, i, j)`.
    pub gamma: DenseTensor,
    /// `∇J_α` in the `(x, y, value)` layout.
    pub cov_j: [DenseTensor; 3],
    pub f: [DenseTensor; 3],
    pub theta: [DVector<f64>; 3],
    pub r4: DenseTensor,
    pub ricci: DMatrix<f64>,
    pub tau: f64,
}

/// Residuals of the chart invariants at one point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PointValidation {
    pub metric_asymmetry: f64,
    pub hypercomplex: f64,
    pub compatibility: f64,
    pub signature: (usize, usize),
}

impl PointValidation {
    pub fn passes(&self, tol: f64) -> bool {
        self.metric_asymmetry <= 1e-12
            && self.hypercomplex <= tol
            && self.compatibility <= tol
            && self.signature.0 == self.signature.1
    }
}

fn flatten(m: &DMatrix<f64>) -> Vec<f64> {
    // Row-major, matching DenseTensor storage.
    let mut out = Vec::with_capacity(m.len());
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            out.push(m[(i, j)]);
        }
    }
    out
}

fn unflatten(d: usize, v: &[f64]) -> DMatrix<f64> {
    DMatrix::from_row_slice(d, d, v)
}

impl ChartManifold {
    pub fn new(dim: usize, domain: Domain, metric: MetricField, triple: TripleField) -> Result<Self> {
        check_dim(dim)?;
        if domain.dim() != dim {
            return Err(Error::Shape(format!(
                "domain has {} axes, manifold dimension is {dim}",
                domain.dim()
            )));
        }
        let fd = FdConfig::for_scale(domain.scale());
        Ok(Self {
            dim,
            domain,
            metric,
            triple,
            fd,
            conventions: Conventions::default(),
        })
    }

    pub fn with_fd(mut self, fd: FdConfig) -> Result<Self> {
        fd.validate()?;
        self.fd = fd;
        Ok(self)
    }

    pub fn with_conventions(mut self, conventions: Conventions) -> Self {
        self.conventions = conventions;
        self
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n(&self) -> usize {
        self.dim / 4
    }

    pub fn domain(&self) -> &Domain {
        &self.domain
    }

    pub fn fd(&self) -> &FdConfig {
        &self.fd
    }

    pub fn conventions(&self) -> &Conventions {
        &self.conventions
    }

    fn raw_metric(&self, q: &[f64]) -> Result<DMatrix<f64>> {
        let g = (self.metric)(q)?;
        if g.nrows() != self.dim || g.ncols() != self.dim {
            return Err(Error::Shape(format!(
                "metric field returned {}x{} at {q:?}",
                g.nrows(),
                g.ncols()
            )));
        }
        if g.iter().any(|v| !v.is_finite()) {
            return Err(Error::Field(format!("metric field is not finite at {q:?}")));
        }
        Ok(g)
    }

    /// Metric at a stencil point, with the nondegeneracy guard.
    fn stencil_metric(&self, q: &[f64]) -> Result<DMatrix<f64>> {
        let g = self.raw_metric(q)?;
        let scale = matrix_max_abs(&g);
        let threshold = 1e-12 * scale.powi(self.dim as i32);
        let det = g.clone().full_piv_lu().determinant();
        if !(det.abs() > threshold) {
            return Err(Error::DegenerateMetric { det, threshold });
        }
        Ok(g)
    }

    pub fn metric_at(&self, q: &[f64]) -> Result<MetricBundle> {
        MetricBundle::new(self.raw_metric(q)?)
    }

    pub fn triple_at(&self, q: &[f64]) -> Result<HTriple> {
        let h = (self.triple)(q)?;
        if h.dim() != self.dim {
            return Err(Error::Shape(format!("triple field has dim {} at {q:?}", h.dim())));
        }
        if h.all().iter().any(|m| m.iter().any(|v| !v.is_finite())) {
            return Err(Error::Field(format!("structure field is not finite at {q:?}")));
        }
        Ok(h)
    }

    /// Refuses points closer than twice the stencil reach to the boundary.
    pub fn check_interior(&self, p: &[f64], reach: f64) -> Result<()> {
        if p.len() != self.dim {
            return Err(Error::Shape(format!("point has {} coordinates, expected {}", p.len(), self.dim)));
        }
        let margin = 2.0 * reach;
        for axis in 0..self.dim {
            let (lo, hi) = (self.domain.lo[axis], self.domain.hi[axis]);
            if !(p[axis] - lo >= margin && hi - p[axis] >= margin) {
                return Err(Error::TooCloseToBoundary {
                    point: p.to_vec(),
                    axis,
                    margin,
                });
            }
        }
        Ok(())
    }

    /// Reach of the first-derivative stencil.
    pub fn first_reach(&self) -> f64 {
        self.fd.reach(self.fd.step)
    }

    /// Reach of curvature (second metric derivatives plus first derivatives).
    pub fn curvature_reach(&self) -> f64 {
        self.fd.reach(self.fd.nested_step) + self.first_reach()
    }

    /// Reach of derivatives of curvature-level quantities.
    pub fn deepest_reach(&self) -> f64 {
        self.fd.reach(self.fd.outer_step) + self.curvature_reach()
    }

    fn shifted(p: &[f64], axis: usize, delta: f64) -> Vec<f64> {
        let mut q = p.to_vec();
        q[axis] += delta;
        q
    }

    /// Central difference of a vector-valued function along one axis.
    pub fn partial(
        &self,
        f: &dyn Fn(&[f64]) -> Result<Vec<f64>>,
        p: &[f64],
        axis: usize,
        h: f64,
    ) -> Result<Vec<f64>> {
        let mut acc: Option<Vec<f64>> = None;
        for &(off, w) in self.fd.order.first() {
            let plus = f(&Self::shifted(p, axis, off * h))?;
            let minus = f(&Self::shifted(p, axis, -off * h))?;
            if plus.len() != minus.len() {
                return Err(Error::Field("field changed length between stencil points".into()));
            }
            let a = acc.get_or_insert_with(|| vec![0.0; plus.len()]);
            if a.len() != plus.len() {
                return Err(Error::Field("field changed length between stencil points".into()));
            }
            for ((x, u), v) in a.iter_mut().zip(&plus).zip(&minus) {
                *x += w * (u - v);
            }
        }
        Ok(acc.unwrap_or_default().into_iter().map(|x| x / h).collect())
    }

    /// `∂_m g` for every axis `m`.
    pub fn metric_derivatives(&self, p: &[f64]) -> Result<Vec<DMatrix<f64>>> {
        let f = |q: &[f64]| self.stencil_metric(q).map(|g| flatten(&g));
        (0..self.dim)
            .map(|m| Ok(unflatten(self.dim, &self.partial(&f, p, m, self.fd.step)?)))
            .collect()
    }

    /// `∂_m ∂_n g` on the `nested_step` stencil, indexed `[m][n]`.
    pub fn metric_second_derivatives(&self, p: &[f64]) -> Result<Vec<Vec<DMatrix<f64>>>> {
        let d = self.dim;
        let h = self.fd.nested_step;
        let mut out = vec![vec![DMatrix::zeros(d, d); d]; d];
        let centre = self.stencil_metric(p)?;
        let first = self.fd.order.first();
        for m in 0..d {
            let mut acc = DMatrix::zeros(d, d);
            for &(off, w) in self.fd.order.second() {
                let plus = self.stencil_metric(&Self::shifted(p, m, off * h))?;
                let minus = self.stencil_metric(&Self::shifted(p, m, -off * h))?;
                acc += ((plus - &centre) + (minus - &centre)) * w;
            }
            out[m][m] = acc / (h * h);
            for n in m + 1..d {
                let mut acc = DMatrix::zeros(d, d);
                for &(om, wm) in first {
                    for &(on, wn) in first {
                        let at = |sm: f64, sn: f64| {
                            self.stencil_metric(&Self::shifted(&Self::shifted(p, m, sm * om * h), n, sn * on * h))
                        };
                        let (pp, pm, mp, mm) = (at(1.0, 1.0)?, at(1.0, -1.0)?, at(-1.0, 1.0)?, at(-1.0, -1.0)?);
                        acc += ((pp - pm) - (mp - mm)) * (wm * wn);
                    }
                }
                let v = acc / (h * h);
                out[n][m] = v.clone();
                out[m][n] = v;
            }
        }
        Ok(out)
    }

    /// `∂_m J_α` for every axis, indexed `[α][m]`.
    pub fn triple_derivatives(&self, p: &[f64]) -> Result<[Vec<DMatrix<f64>>; 3]> {
        let d = self.dim;
        let f = |q: &[f64]| {
            let h = self.triple_at(q)?;
            Ok(h.all().iter().flat_map(flatten).collect::<Vec<f64>>())
        };
        let mut out: [Vec<DMatrix<f64>>; 3] = Default::default();
        for m in 0..d {
            let v = self.partial(&f, p, m, self.fd.step)?;
            for (a, slot) in out.iter_mut().enumerate() {
                slot.push(unflatten(d, &v[a * d * d..(a + 1) * d * d]));
            }
        }
        Ok(out)
    }

    pub fn christoffel(&self, p: &[f64]) -> Result<DenseTensor> {
        self.check_interior(p, self.first_reach())?;
        let g = self.metric_at(p)?;
        let dg = self.metric_derivatives(p)?;
        christoffel_from(&g, &dg)
    }

    pub fn cov_deriv_triple(&self, p: &[f64]) -> Result<[DenseTensor; 3]> {
        self.check_interior(p, self.first_reach())?;
        let g = self.metric_at(p)?;
        let gamma = christoffel_from(&g, &self.metric_derivatives(p)?)?;
        let h = self.triple_at(p)?;
        let dj = self.triple_derivatives(p)?;
        per_alpha(|alpha| cov_deriv_j_from(&gamma, h.get(alpha), &dj[alpha.index()]))
    }

    pub fn cov_deriv_j(&self, p: &[f64], alpha: Alpha) -> Result<DenseTensor> {
        self.check_interior(p, self.first_reach())?;
        let g = self.metric_at(p)?;
        let gamma = christoffel_from(&g, &self.metric_derivatives(p)?)?;
        let h = self.triple_at(p)?;
        let dj = self.triple_derivatives(p)?;
        cov_deriv_j_from(&gamma, h.get(alpha), &dj[alpha.index()])
    }

    pub fn structural_f(&self, p: &[f64], alpha: Alpha) -> Result<DenseTensor> {
        let g = self.metric_at(p)?;
        structural_f_from(&self.cov_deriv_j(p, alpha)?, &g)
    }

    pub fn lie_theta(&self, p: &[f64], alpha: Alpha) -> Result<DVector<f64>> {
        let g = self.metric_at(p)?;
        lie_theta_from(&self.structural_f(p, alpha)?, &g)
    }

    /// The second reading of `F_α`: `(∇_x g_α)(y, z)` from derivatives of `g_α = J_αᵀ g`.
    pub fn structural_f_via_metric(&self, p: &[f64], alpha: Alpha) -> Result<DenseTensor> {
        self.check_interior(p, self.first_reach())?;
        let d = self.dim;
        let g = self.metric_at(p)?;
        let gamma = christoffel_from(&g, &self.metric_derivatives(p)?)?;
        let ga = |q: &[f64]| -> Result<Vec<f64>> {
            let gq = self.stencil_metric(q)?;
            let j = self.triple_at(q)?.get(alpha).clone();
            Ok(flatten(&(j.transpose() * gq)))
        };
        let center = unflatten(d, &ga(p)?);
        let dga: Vec<DMatrix<f64>> = (0..d)
            .map(|m| Ok(unflatten(d, &self.partial(&ga, p, m, self.fd.step)?)))
            .collect::<Result<_>>()?;
        DenseTensor::from_fn(d, &[Variance::Co; 3], |i| {
            let (x, y, z) = (i[0], i[1], i[2]);
            let mut v = dga[x][(y, z)];
            for l in 0..d {
                v -= gamma.get(&[l, x, y]) * center[(l, z)] + gamma.get(&[l, x, z]) * center[(y, l)];
            }
            v
        })
    }

    /// `N_α` through the `∇`-formula.
    pub fn nijenhuis(&self, p: &[f64], alpha: Alpha) -> Result<DenseTensor> {
        let h = self.triple_at(p)?;
        Ok(nijenhuis_from_covj(&self.cov_deriv_j(p, alpha)?, h.get(alpha))?.0)
    }

    /// `N*_α` through the `∇`-formula.
    pub fn nijenhuis_assoc(&self, p: &[f64], alpha: Alpha) -> Result<DenseTensor> {
        let h = self.triple_at(p)?;
        Ok(nijenhuis_from_covj(&self.cov_deriv_j(p, alpha)?, h.get(alpha))?.1)
    }

    /// `N_α(∂_x, ∂_y)` from coordinate Lie brackets, using only `∂J_α`.
    pub fn nijenhuis_bracket(&self, p: &[f64], alpha: Alpha) -> Result<DenseTensor> {
        self.check_interior(p, self.first_reach())?;
        let d = self.dim;
        let h = self.triple_at(p)?;
        let j = h.get(alpha);
        let dj = &self.triple_derivatives(p)?[alpha.index()];
        // [J∂x, J∂y] − J[J∂x, ∂y] − J[∂x, J∂y] − [∂x, ∂y], with J∂x = J^a_x ∂_a.
        DenseTensor::from_fn(d, &[Variance::Co, Variance::Co, Variance::Contra], |i| {
            let (x, y, k) = (i[0], i[1], i[2]);
            let mut v = 0.0;
            for a in 0..d {
                v += j[(a, x)] * dj[a][(k, y)] - j[(a, y)] * dj[a][(k, x)];
                v += j[(k, a)] * dj[y][(a, x)] - j[(k, a)] * dj[x][(a, y)];
            }
            v
        })
    }

    /// `∂_m Γ^k_{ij}` from second metric derivatives, stored `(m, k, i, j)`.
    fn christoffel_derivative(&self, p: &[f64], g: &MetricBundle, dg: &[DMatrix<f64>]) -> Result<DenseTensor> {
        let d = self.dim;
        let ddg = self.metric_second_derivatives(p)?;
        let gi = g.g_inv();
        let dgi: Vec<DMatrix<f64>> = dg.iter().map(|dm| -(gi * dm * gi)).collect();
        // A_{lij} = ∂_i g_{jl} + ∂_j g_{il} − ∂_l g_{ij}
        let a = |l: usize, i: usize, j: usize| dg[i][(j, l)] + dg[j][(i, l)] - dg[l][(i, j)];
        let da = |m: usize, l: usize, i: usize, j: usize| {
            ddg[m][i][(j, l)] + ddg[m][j][(i, l)] - ddg[m][l][(i, j)]
        };
        DenseTensor::from_fn(d, &[Variance::Co, Variance::Contra, Variance::Co, Variance::Co], |idx| {
            let (m, k, i, j) = (idx[0], idx[1], idx[2], idx[3]);
            let mut v = 0.0;
            for l in 0..d {
                v += dgi[m][(k, l)] * a(l, i, j) + gi[(k, l)] * da(m, l, i, j);
            }
            0.5 * v
        })
    }

    pub fn curvature(&self, p: &[f64]) -> Result<Curvature> {
        self.check_interior(p, self.curvature_reach())?;
        let g = self.metric_at(p)?;
        let dg = self.metric_derivatives(p)?;
        let gamma = christoffel_from(&g, &dg)?;
        let dgamma = self.christoffel_derivative(p, &g, &dg)?;
        let r4 = riemann_from(&g, &gamma, &dgamma)?;
        let ricci = ricci_from(&r4, &g, self.conventions.ricci)?;
        let tau = scalar_from(&ricci, &g);
        Ok(Curvature { r4, ricci, tau })
    }

    pub fn point_calculus(&self, p: &[f64]) -> Result<PointCalculus> {
        self.check_interior(p, self.curvature_reach())?;
        let metric = self.metric_at(p)?;
        let triple = self.triple_at(p)?;
        let dg = self.metric_derivatives(p)?;
        let gamma = christoffel_from(&metric, &dg)?;
        let dj = self.triple_derivatives(p)?;
        let cov_j = per_alpha(|alpha| cov_deriv_j_from(&gamma, triple.get(alpha), &dj[alpha.index()]))?;
        let f = per_alpha(|alpha| structural_f_from(&cov_j[alpha.index()], &metric))?;
        let theta = per_alpha(|alpha| lie_theta_from(&f[alpha.index()], &metric))?;
        let dgamma = self.christoffel_derivative(p, &metric, &dg)?;
        let r4 = riemann_from(&metric, &gamma, &dgamma)?;
        let ricci = ricci_from(&r4, &metric, self.conventions.ricci)?;
        let tau = scalar_from(&ricci, &metric);
        Ok(PointCalculus {
            point: p.to_vec(),
            metric,
            triple,
            gamma,
            cov_j,
            f,
            theta,
            r4,
            ricci,
            tau,
        })
    }

    /// `dω` of a covector field on the `nested_step` stencil. The field may itself
    /// use first-derivative stencils of the inputs; the boundary check allows for that.
    pub fn d_oneform(
        &self,
        field: &(dyn Fn(&[f64]) -> Result<DVector<f64>> + Sync),
        p: &[f64],
    ) -> Result<DMatrix<f64>> {
        self.check_interior(p, self.fd.reach(self.fd.nested_step) + self.first_reach())?;
        let d = self.dim;
        let f = |q: &[f64]| -> Result<Vec<f64>> {
            let v = field(q)?;
            if v.len() != d {
                return Err(Error::Shape(format!("1-form field has {} components", v.len())));
            }
            Ok(v.iter().copied().collect())
        };
        // dw[m][i] = ∂_m ω_i
        let dw: Vec<Vec<f64>> = (0..d)
            .map(|m| self.partial(&f, p, m, self.fd.nested_step))
            .collect::<Result<_>>()?;
        let factor = if self.conventions.half_exterior { 0.5 } else { 1.0 };
        let mut out = DMatrix::zeros(d, d);
        for x in 0..d {
            for y in x + 1..d {
                let v = factor * (dw[x][y] - dw[y][x]);
                out[(x, y)] = v;
                out[(y, x)] = -v;
            }
        }
        Ok(out)
    }

    /// Gradient of a scalar curvature-level field on the `outer_step` stencil.
    pub fn scalar_gradient(&self, field: &(dyn Fn(&[f64]) -> Result<f64> + Sync), p: &[f64]) -> Result<DVector<f64>> {
        self.check_interior(p, self.deepest_reach())?;
        let f = |q: &[f64]| field(q).map(|v| vec![v]);
        let mut out = DVector::zeros(self.dim);
        for m in 0..self.dim {
            out[m] = self.partial(&f, p, m, self.fd.outer_step)?[0];
        }
        Ok(out)
    }

    /// `(∇_k ρ)_{ij}` stored `(k, i, j)`.
    pub fn ricci_covariant_derivative(&self, p: &[f64]) -> Result<DenseTensor> {
        self.check_interior(p, self.deepest_reach())?;
        let d = self.dim;
        let g = self.metric_at(p)?;
        let gamma = christoffel_from(&g, &self.metric_derivatives(p)?)?;
        let rho = self.curvature(p)?.ricci;
        let f = |q: &[f64]| self.curvature(q).map(|c| flatten(&c.ricci));
        let drho: Vec<DMatrix<f64>> = (0..d)
            .map(|m| Ok(unflatten(d, &self.partial(&f, p, m, self.fd.outer_step)?)))
            .collect::<Result<_>>()?;
        DenseTensor::from_fn(d, &[Variance::Co; 3], |idx| {
            let (k, i, j) = (idx[0], idx[1], idx[2]);
            let mut v = drho[k][(i, j)];
            for l in 0..d {
                v -= gamma.get(&[l, k, i]) * rho[(l, j)] + gamma.get(&[l, k, j]) * rho[(i, l)];
            }
            v
        })
    }

    /// `max |∇g| / max|g|` and `max |Γ^k_{ij} − Γ^k_{ji}|`.
    pub fn levi_civita_residual(&self, p: &[f64]) -> Result<(f64, f64)> {
        self.check_interior(p, self.first_reach())?;
        let d = self.dim;
        let g = self.metric_at(p)?;
        let dg = self.metric_derivatives(p)?;
        let gamma = christoffel_from(&g, &dg)?;
        let gm = g.g();
        let mut nabla_g = 0.0_f64;
        let mut asym = 0.0_f64;
        for k in 0..d {
            for i in 0..d {
                for j in 0..d {
                    let mut v = dg[k][(i, j)];
                    for l in 0..d {
                        v -= gamma.get(&[l, k, i]) * gm[(l, j)] + gamma.get(&[l, k, j]) * gm[(i, l)];
                    }
                    nabla_g = nabla_g.max(v.abs());
                    asym = asym.max((gamma.get(&[k, i, j]) - gamma.get(&[k, j, i])).abs());
                }
            }
        }
        Ok((nabla_g / g.scale(), asym))
    }

    /// Checks the pointwise invariants of the chart at `p`.
    pub fn validate_at(&self, p: &[f64]) -> Result<PointValidation> {
        let raw = self.raw_metric(p)?;
        let metric_asymmetry = matrix_max_abs(&(&raw - raw.transpose())) / matrix_max_abs(&raw).max(f64::MIN_POSITIVE);
        let g = MetricBundle::new(raw)?;
        let h = self.triple_at(p)?;
        let compat = check_nh_compat(&g, &h)?;
        Ok(PointValidation {
            metric_asymmetry,
            hypercomplex: check_hypercomplex(&h).max(),
            compatibility: compat.max(),
            signature: compat.signature,
        })
    }

    /// Fails with a typed error at the first point violating the chart invariants.
    pub fn validate(&self, points: &[Vec<f64>]) -> Result<()> {
        for p in points {
            let v = self.validate_at(p)?;
            if v.hypercomplex > COMPAT_TOL {
                return Err(Error::NotHypercomplex {
                    residual: v.hypercomplex,
                    tol: COMPAT_TOL,
                });
            }
            check_nh_compat(&self.metric_at(p)?, &self.triple_at(p)?)?.require(COMPAT_TOL)?;
        }
        Ok(())
    }

    /// Sub-box where every operation, including `∇ρ`, is admissible.
    pub fn safe_box(&self) -> Result<(Vec<f64>, Vec<f64>)> {
        let margin = 2.0 * self.deepest_reach() * (1.0 + 1e-9);
        let lo: Vec<f64> = self.domain.lo.iter().map(|v| v + margin).collect();
        let hi: Vec<f64> = self.domain.hi.iter().map(|v| v - margin).collect();
        if lo.iter().zip(&hi).any(|(a, b)| a >= b) {
            return Err(Error::Other("domain is too small for the finite-difference stencils".into()));
        }
        Ok((lo, hi))
    }

    /// Tensor grid with `per_axis` points per axis over [`safe_box`](Self::safe_box),
    /// in lexicographic coordinate order.
    pub fn grid_points(&self, per_axis: usize) -> Result<Vec<Vec<f64>>> {
        let (lo, hi) = self.safe_box()?;
        let per_axis = per_axis.max(1);
        let coord = |axis: usize, k: usize| {
            if per_axis == 1 {
                0.5 * (lo[axis] + hi[axis])
            } else {
                lo[axis] + (hi[axis] - lo[axis]) * k as f64 / (per_axis - 1) as f64
            }
        };
        let total = per_axis.checked_pow(self.dim as u32).ok_or(Error::TooLarge {
            dim: self.dim,
            max: 0,
        })?;
        let mut out = Vec::with_capacity(total);
        let mut idx = vec![0usize; self.dim];
        for _ in 0..total {
            out.push((0..self.dim).map(|a| coord(a, idx[a])).collect());
            for s in (0..self.dim).rev() {
                idx[s] += 1;
                if idx[s] < per_axis {
                    break;
                }
                idx[s] = 0;
            }
        }
        Ok(out)
    }

    /// `count` uniform points in [`safe_box`](Self::safe_box), reproducible by seed
    /// and sorted lexicographically.
    pub fn random_points(&self, count: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
        let (lo, hi) = self.safe_box()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut out: Vec<Vec<f64>> = (0..count)
            .map(|_| (0..self.dim).map(|a| rng.random_range(lo[a]..hi[a])).collect())
            .collect();
        sort_points(&mut out);
        Ok(out)
    }
}

pub fn sort_points(points: &mut [Vec<f64>]) {
    points.sort_by(|a, b| {
        a.iter()
            .zip(b)
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
    });
}

/// `Γ^k_{ij} = ½ g^{kl}(∂_i g_{jl} + ∂_j g_{il} − ∂_l g_{ij})`, stored `(k, i, j)`.
pub fn christoffel_from(g: &MetricBundle, dg: &[DMatrix<f64>]) -> Result<DenseTensor> {
    let d = g.dim();
    if dg.len() != d {
        return Err(Error::Shape("need one metric derivative per axis".into()));
    }
    let gi = g.g_inv();
    let mut first = vec![0.0; d * d * d];
    for l in 0..d {
        for i in 0..d {
            for j in 0..d {
                first[(l * d + i) * d + j] = dg[i][(j, l)] + dg[j][(i, l)] - dg[l][(i, j)];
            }
        }
    }
    let mut out = DenseTensor::from_fn(d, &[Variance::Contra, Variance::Co, Variance::Co], |idx| {
        let (k, i, j) = (idx[0], idx[1], idx[2]);
        0.5 * (0..d).map(|l| gi[(k, l)] * first[(l * d + i) * d + j]).sum::<f64>()
    })?;
    // Torsion-free by construction; force exact symmetry in (i, j).
    out = out.symmetrized(1, 2)?;
    Ok(out)
}

/// `(∇_i J)^k_j = ∂_i J^k_j + Γ^k_{il} J^l_j − Γ^l_{ij} J^k_l` in the `(x, y, value)` layout.
pub fn cov_deriv_j_from(gamma: &DenseTensor, j: &DMatrix<f64>, dj: &[DMatrix<f64>]) -> Result<DenseTensor> {
    let d = gamma.dim();
    if dj.len() != d || j.nrows() != d {
        return Err(Error::Shape("structure derivative shape mismatch".into()));
    }
    DenseTensor::from_fn(d, &[Variance::Co, Variance::Co, Variance::Contra], |idx| {
        let (i, jj, k) = (idx[0], idx[1], idx[2]);
        let mut v = dj[i][(k, jj)];
        for l in 0..d {
            v += gamma.get(&[k, i, l]) * j[(l, jj)] - gamma.get(&[l, i, jj]) * j[(k, l)];
        }
        v
    })
}

/// `F(x, y, z) = g((∇_x J) y, z)`.
pub fn structural_f_from(cov_j: &DenseTensor, g: &MetricBundle) -> Result<DenseTensor> {
    lower(cov_j, 2, g)
}

/// `θ(·) = g^{ij} F(e_i, e_j, ·)`.
pub fn lie_theta_from(f: &DenseTensor, g: &MetricBundle) -> Result<DVector<f64>> {
    contract(f, 0, 1, g)?.to_vector()
}

/// `(N, N*)` from `∇J` via
/// `N(x,y) = (∇_xJ)Jy − (∇_yJ)Jx + (∇_{Jx}J)y − (∇_{Jy}J)x` and the all-plus variant.
pub fn nijenhuis_from_covj(cov_j: &DenseTensor, j: &DMatrix<f64>) -> Result<(DenseTensor, DenseTensor)> {
    let d = cov_j.dim();
    let a = cov_j.endomorphisms()?;
    // B[x] = ∇_{J e_x} J = Σ_m J[m, x] A[m]
    let b: Vec<DMatrix<f64>> = (0..d)
        .map(|x| {
            let mut acc = DMatrix::zeros(d, d);
            for (m, am) in a.iter().enumerate() {
                let w = j[(m, x)];
                if w != 0.0 {
                    acc += am * w;
                }
            }
            acc
        })
        .collect();
    let aj: Vec<DMatrix<f64>> = a.iter().map(|am| am * j).collect();
    let build = |sign: f64| {
        DenseTensor::from_fn(d, &[Variance::Co, Variance::Co, Variance::Contra], |idx| {
            let (x, y, k) = (idx[0], idx[1], idx[2]);
            aj[x][(k, y)] + sign * aj[y][(k, x)] + b[x][(k, y)] + sign * b[y][(k, x)]
        })
    };
    Ok((build(-1.0)?, build(1.0)?))
}

/// `R(x, y, z, w) = g_{wl} R^l_{xyz}` with
/// `R^l_{ijk} = ∂_iΓ^l_{jk} − ∂_jΓ^l_{ik} + Γ^l_{im}Γ^m_{jk} − Γ^l_{jm}Γ^m_{ik}`.
pub fn riemann_from(g: &MetricBundle, gamma: &DenseTensor, dgamma: &DenseTensor) -> Result<DenseTensor> {
    let d = g.dim();
    let mut up = vec![0.0; d.pow(4)];
    let at = |l: usize, i: usize, j: usize, k: usize| ((l * d + i) * d + j) * d + k;
    for l in 0..d {
        for i in 0..d {
            for j in 0..d {
                for k in 0..d {
                    let mut v = dgamma.get(&[i, l, j, k]) - dgamma.get(&[j, l, i, k]);
                    for m in 0..d {
                        v += gamma.get(&[l, i, m]) * gamma.get(&[m, j, k])
                            - gamma.get(&[l, j, m]) * gamma.get(&[m, i, k]);
                    }
                    up[at(l, i, j, k)] = v;
                }
            }
        }
    }
    let gm = g.g();
    let r = DenseTensor::from_fn(d, &[Variance::Co; 4], |idx| {
        let (x, y, z, w) = (idx[0], idx[1], idx[2], idx[3]);
        (0..d).map(|l| gm[(w, l)] * up[at(l, x, y, z)]).sum()
    })?;
    r.antisymmetrized(0, 1)
}

pub fn ricci_from(r4: &DenseTensor, g: &MetricBundle, trace: RicciTrace) -> Result<DMatrix<f64>> {
    let (a, b) = match trace {
        RicciTrace::FirstLast => (0, 3),
        RicciTrace::FirstThird => (0, 2),
    };
    let rho = contract(r4, a, b, g)?.to_matrix()?;
    Ok((&rho + rho.transpose()) * 0.5)
}

pub fn scalar_from(ricci: &DMatrix<f64>, g: &MetricBundle) -> f64 {
    (g.g_inv() * ricci).trace()
}
