//! Membership residuals for the basic classes of almost Hermitian structures
//! (for `J₁`) and of almost Norden structures (for `J₂`, `J₃`).
//!
//! Every residual is a max-abs norm divided by `max|g|`, so replacing `g` by
//! `c·g` with constant `c > 0` leaves it unchanged (`F` scales with `c`, `θ` does
//! not). `W₀` is contained in every class: when `W₀` passes, every class of the
//! same structure is reported as passing.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::chart::{lie_theta_from, ChartManifold};
use crate::error::{Error, Result};
use crate::structures::Alpha;
use crate::tensor::{cyclic_sum, DenseTensor, MetricBundle, Variance};

pub const W0: &str = "W0";
pub const W1: &str = "W1";
pub const W2: &str = "W2";
pub const W3: &str = "W3";
pub const W4: &str = "W4";
pub const W1_W3: &str = "W1+W3";

/// Tolerance for the consistency of a supplied `θ` with the trace of `F`.
pub const THETA_CONSISTENCY_TOL: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassReport {
    pub structure: Alpha,
    pub tolerance: f64,
    pub residuals: BTreeMap<String, f64>,
    pub verdicts: BTreeMap<String, bool>,
    /// Passing class with the smallest defining subspace; `None` means only the general class.
    pub finest: Option<String>,
    /// Number of points aggregated (1 for a pointwise report).
    pub points: usize,
}

impl ClassReport {
    fn from_residuals(structure: Alpha, residuals: BTreeMap<String, f64>, tolerance: f64, points: usize) -> Self {
        let w0 = residuals.get(W0).is_some_and(|r| *r <= tolerance);
        let verdicts: BTreeMap<String, bool> = residuals
            .iter()
            .map(|(k, r)| (k.clone(), w0 || *r <= tolerance))
            .collect();
        let finest = if w0 {
            Some(W0.to_string())
        } else {
            [W1, W2, W3, W4, W1_W3]
                .iter()
                .find(|c| verdicts.get(**c).copied().unwrap_or(false))
                .map(|c| c.to_string())
        };
        Self {
            structure,
            tolerance,
            residuals,
            verdicts,
            finest,
            points,
        }
    }

    pub fn passes(&self, class: &str) -> bool {
        self.verdicts.get(class).copied().unwrap_or(false)
    }

    pub fn residual(&self, class: &str) -> Option<f64> {
        self.residuals.get(class).copied()
    }

    /// Same residuals judged at another tolerance.
    pub fn with_tolerance(&self, tolerance: f64) -> Self {
        Self::from_residuals(self.structure, self.residuals.clone(), tolerance, self.points)
    }

    /// Max residual over several reports of the same structure.
    pub fn aggregate(reports: &[ClassReport]) -> Result<ClassReport> {
        let first = reports
            .first()
            .ok_or_else(|| Error::Other("cannot aggregate an empty report set".into()))?;
        let mut residuals: BTreeMap<String, f64> = BTreeMap::new();
        let mut points = 0;
        for r in reports {
            if r.structure != first.structure {
                return Err(Error::Other("aggregated reports must share a structure".into()));
            }
            points += r.points;
            for (k, v) in &r.residuals {
                let e = residuals.entry(k.clone()).or_insert(0.0);
                *e = e.max(*v);
            }
        }
        Ok(Self::from_residuals(first.structure, residuals, first.tolerance, points))
    }
}

fn check_inputs(f: &DenseTensor, theta: &DVector<f64>, g: &MetricBundle, j: &DMatrix<f64>) -> Result<()> {
    let d = g.dim();
    if f.dim() != d || f.rank() != 3 || f.variance().iter().any(|&v| v != Variance::Co) {
        return Err(Error::Shape("F must be a covariant rank-3 tensor on the metric's space".into()));
    }
    if theta.len() != d || j.nrows() != d || j.ncols() != d {
        return Err(Error::Shape("θ and J must match the metric dimension".into()));
    }
    let trace = lie_theta_from(f, g)?;
    let diff = (&trace - theta).amax();
    let rel = diff / trace.amax().max(theta.amax()).max(1.0);
    if rel > THETA_CONSISTENCY_TOL {
        return Err(Error::InconsistentTheta {
            residual: rel,
            tol: THETA_CONSISTENCY_TOL,
        });
    }
    Ok(())
}

/// `θ(J e_z)` for every `z`, i.e. `Jᵀθ`.
fn theta_after(theta: &DVector<f64>, j: &DMatrix<f64>) -> DVector<f64> {
    j.transpose() * theta
}

/// Residuals of the Hermitian classes for `(F₁, θ₁)`.
pub fn hermitian_residuals(
    f: &DenseTensor,
    theta: &DVector<f64>,
    g: &MetricBundle,
    j: &DMatrix<f64>,
) -> Result<BTreeMap<String, f64>> {
    check_inputs(f, theta, g, j)?;
    let d = g.dim();
    let n = (d / 4) as f64;
    let s = g.scale();
    let gm = g.g();
    let gj = gm * j; // g(x, J y) = (g J)[x, y]
    let tj = theta_after(theta, j);
    let mut out = BTreeMap::new();
    out.insert(W0.to_string(), f.max_abs() / s);
    // F(x, y, z) + F(y, x, z)
    out.insert(W1.to_string(), f.add(&f.permuted(&[1, 0, 2])?)?.max_abs() / s);
    out.insert(W2.to_string(), cyclic_sum(f)?.max_abs() / s);
    let fjj = f.compose_slot(0, j)?.compose_slot(1, j)?;
    out.insert(W3.to_string(), f.sub(&fjj)?.max_abs() / s + theta.amax());
    let c = 1.0 / (4.0 * n - 2.0);
    let w4 = DenseTensor::from_fn(d, &[Variance::Co; 3], |i| {
        let (x, y, z) = (i[0], i[1], i[2]);
        c * (gm[(x, y)] * theta[z] - gm[(x, z)] * theta[y] - gj[(x, y)] * tj[z] + gj[(x, z)] * tj[y])
    })?;
    out.insert(W4.to_string(), f.sub(&w4)?.max_abs() / s);
    Ok(out)
}

/// Residuals of the Norden classes for `(F_α, θ_α)`, `α ∈ {2, 3}`, including `W₁ ⊕ W₃`.
pub fn norden_residuals(
    f: &DenseTensor,
    theta: &DVector<f64>,
    g: &MetricBundle,
    j: &DMatrix<f64>,
) -> Result<BTreeMap<String, f64>> {
    check_inputs(f, theta, g, j)?;
    let d = g.dim();
    let n = (d / 4) as f64;
    let s = g.scale();
    let gm = g.g();
    let gj = gm * j; // g(x, J y)
    let jg = j.transpose() * gm; // g(J x, y)
    let tj = theta_after(theta, j);
    let mut out = BTreeMap::new();
    out.insert(W0.to_string(), f.max_abs() / s);
    let c1 = 1.0 / (4.0 * n);
    let w1 = DenseTensor::from_fn(d, &[Variance::Co; 3], |i| {
        let (x, y, z) = (i[0], i[1], i[2]);
        c1 * (gm[(x, y)] * theta[z] + gm[(x, z)] * theta[y] + gj[(x, y)] * tj[z] + gj[(x, z)] * tj[y])
    })?;
    out.insert(W1.to_string(), f.sub(&w1)?.max_abs() / s);
    let fj = f.compose_slot(2, j)?;
    out.insert(W2.to_string(), cyclic_sum(&fj)?.max_abs() / s + theta.amax());
    let sf = cyclic_sum(f)?;
    out.insert(W3.to_string(), sf.max_abs() / s);
    let c13 = 1.0 / (2.0 * n);
    let inner = DenseTensor::from_fn(d, &[Variance::Co; 3], |i| {
        let (x, y, z) = (i[0], i[1], i[2]);
        c13 * (gm[(x, y)] * theta[z] + jg[(x, y)] * tj[z])
    })?;
    out.insert(W1_W3.to_string(), sf.sub(&cyclic_sum(&inner)?)?.max_abs() / s);
    Ok(out)
}

pub fn classify_hermitian(
    f1: &DenseTensor,
    theta1: &DVector<f64>,
    g: &MetricBundle,
    j1: &DMatrix<f64>,
    tol: f64,
) -> Result<ClassReport> {
    Ok(ClassReport::from_residuals(
        Alpha::One,
        hermitian_residuals(f1, theta1, g, j1)?,
        tol,
        1,
    ))
}

pub fn classify_norden(
    f: &DenseTensor,
    theta: &DVector<f64>,
    g: &MetricBundle,
    j: &DMatrix<f64>,
    alpha: Alpha,
    tol: f64,
) -> Result<ClassReport> {
    if alpha == Alpha::One {
        return Err(Error::InvalidAlpha(1));
    }
    Ok(ClassReport::from_residuals(alpha, norden_residuals(f, theta, g, j)?, tol, 1))
}

/// Classifies each structure from pointwise `(F_α, θ_α)`.
pub fn classify_all(
    f: &[DenseTensor; 3],
    theta: &[DVector<f64>; 3],
    g: &MetricBundle,
    j: &[DMatrix<f64>; 3],
    tol: f64,
) -> Result<[ClassReport; 3]> {
    Ok([
        classify_hermitian(&f[0], &theta[0], g, &j[0], tol)?,
        classify_norden(&f[1], &theta[1], g, &j[1], Alpha::Two, tol)?,
        classify_norden(&f[2], &theta[2], g, &j[2], Alpha::Three, tol)?,
    ])
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HyperKahlerVerdict {
    pub residual: f64,
    pub tolerance: f64,
    pub pass: bool,
}

/// Class `𝒦`: `max_α ‖∇J_α‖_∞ ≤ tol`.
pub fn hyper_kahler_check(cov_j: &[DenseTensor; 3], tol: f64) -> HyperKahlerVerdict {
    let residual = cov_j.iter().fold(0.0_f64, |m, t| m.max(t.max_abs()));
    HyperKahlerVerdict {
        residual,
        tolerance: tol,
        pass: residual <= tol,
    }
}

/// Class reports for one chart, aggregated by max residual over `points`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChartClassification {
    pub reports: [ClassReport; 3],
    pub hyper_kahler: HyperKahlerVerdict,
}

pub fn classify_chart(m: &ChartManifold, points: &[Vec<f64>], tol: f64) -> Result<ChartClassification> {
    use rayon::prelude::*;
    let per_point: Vec<([ClassReport; 3], f64)> = points
        .par_iter()
        .map(|p| {
            let g = m.metric_at(p)?;
            let h = m.triple_at(p)?;
            let cov = m.cov_deriv_triple(p)?;
            let f = crate::structures::per_alpha(|a| crate::chart::structural_f_from(&cov[a.index()], &g))?;
            let theta = crate::structures::per_alpha(|a| lie_theta_from(&f[a.index()], &g))?;
            let reports = classify_all(&f, &theta, &g, h.all(), tol)?;
            Ok((reports, hyper_kahler_check(&cov, tol).residual))
        })
        .collect::<Result<_>>()?;
    let collect = |a: usize| -> Result<ClassReport> {
        ClassReport::aggregate(&per_point.iter().map(|(r, _)| r[a].clone()).collect::<Vec<_>>())
    };
    let hk = per_point.iter().fold(0.0_f64, |m, (_, r)| m.max(*r));
    Ok(ChartClassification {
        reports: [collect(0)?, collect(1)?, collect(2)?],
        hyper_kahler: HyperKahlerVerdict {
            residual: hk,
            tolerance: tol,
            pass: hk <= tol,
        },
    })
}
