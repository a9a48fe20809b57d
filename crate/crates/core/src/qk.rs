//! Quaternionic Kähler analysis.
//!
//! A structure is quaternionic Kähler when `(∇_x J_α) = ω_γ(x) J_β − ω_β(x) J_γ`
//! for every cyclic `(α, β, γ)`. This module recovers the local 1-forms `ω_α`,
//! builds the 2-forms `η_α`, and evaluates the curvature identities, the
//! Einstein, flatness and isotropy statements, the Nijenhuis closed forms and
//! the `W₁ ⊕ W₃` package, pointwise or over a chart.
//!
//! Covectors are stored as component vectors `ω(e_x)`, so `ω ∘ J` is `Jᵀω`.
//! Equivalences between vanishing statements are checked as two residual
//! implications: a side `≤ tol` must force the other side `≤ band · tol`.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::Serialize;

use crate::chart::{lie_theta_from, nijenhuis_from_covj, structural_f_from, ChartManifold};
use crate::classifier::{classify_chart, norden_residuals, W0, W1_W3, W3};
use crate::error::{Error, Result};
use crate::ser;
use crate::structures::{associated_matrix, compose_back_pair, compose_front_pair, kahler_type_residual, per_alpha, Alpha, HTriple};
use crate::tensor::{contract, matrix_max_abs, square_norm_nabla_j, DenseTensor, MetricBundle, Variance};

pub const EQ_QK: &str = "Eq-qK";
pub const EQ_RJ: &str = "Eq-RJ";
pub const LEMMA_D_OM: &str = "Lemma-d-om";
pub const EQ_RJJ: &str = "Eq-RJJ";
pub const EQ_RJJ1: &str = "Eq-RJJ1";
pub const EQ_RJJ23: &str = "Eq-RJJ23";
pub const EQ_A_ETA: &str = "Eq-a-eta";
pub const LEMMA_RHO_ETA: &str = "Lemma-rho-eta";
pub const EQ_ETA_RHO: &str = "Eq-eta-rho";
pub const EQ_ETA_J1: &str = "Eq-etaJ1";
pub const EQ_RHO_JJ1: &str = "Eq-rJJ1";
pub const EQ_RJJ23R: &str = "Eq-RJJ23r";
pub const EQ_RJJJJ1: &str = "Eq-RJJJJ1";
pub const EQ_RJJJJ23: &str = "Eq-RJJJJ23";
pub const EQ_RHO4J23: &str = "Eq-rho4J23";
pub const RHO_HYBRID: &str = "rho-hybrid-J23";
pub const A_IDENTITY: &str = "A-identity";
pub const EQ_RJJ23T: &str = "Eq-RJJ23t";
pub const THM_EINSTEIN: &str = "Thm-Einstein";

/// Identities whose derivation needs `n > 1`; at dimension 4 they are reported
/// but do not enter pass/fail decisions.
pub const NEEDS_N_GT_1: [&str; 5] = [RHO_HYBRID, A_IDENTITY, EQ_RJJ23T, THM_EINSTEIN, EQ_RHO4J23];

pub const DEFAULT_BAND: f64 = 100.0;

/// Random vector pairs used for the `A(x, z)` identity.
const A_IDENTITY_PAIRS: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Verdict {
    pub residual: f64,
    pub tolerance: f64,
    pub pass: bool,
}

impl Verdict {
    pub fn new(residual: f64, tolerance: f64) -> Self {
        Self {
            residual,
            tolerance,
            pass: residual <= tolerance,
        }
    }
}

/// `ω_α`, their `g`-duals `Ω_α`, and the quality of the fit.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OmegaTriple {
    #[serde(serialize_with = "ser::vectors3")]
    pub omega: [DVector<f64>; 3],
    #[serde(serialize_with = "ser::vectors3")]
    pub big_omega: [DVector<f64>; 3],
    /// `max_{α,x} max|∇_x J_α − (ω_γ(x) J_β − ω_β(x) J_γ)|`.
    pub residual: f64,
    /// `max |ω_trace − ω_lsq|` between the trace-pairing and least-squares fits.
    pub lsq_discrepancy: f64,
}

impl OmegaTriple {
    pub fn get(&self, alpha: Alpha) -> &DVector<f64> {
        &self.omega[alpha.index()]
    }

    pub fn is_qk(&self, tol: f64) -> bool {
        self.residual <= tol
    }
}

/// Pointwise data: metric, structures and `∇J_α` in the `(x, y, value)` layout.
#[derive(Debug, Clone, PartialEq)]
pub struct QkPoint {
    pub g: MetricBundle,
    pub h: HTriple,
    pub cov_j: [DenseTensor; 3],
}

impl QkPoint {
    pub fn new(g: MetricBundle, h: HTriple, cov_j: [DenseTensor; 3]) -> Result<Self> {
        let d = g.dim();
        if h.dim() != d {
            return Err(Error::Shape("metric and structures differ in dimension".into()));
        }
        for t in &cov_j {
            if t.dim() != d || t.variance() != [Variance::Co, Variance::Co, Variance::Contra] {
                return Err(Error::Shape("∇J must be a (x, y, value) tensor of the metric's dimension".into()));
            }
        }
        Ok(Self { g, h, cov_j })
    }

    pub fn dim(&self) -> usize {
        self.g.dim()
    }

    pub fn structural_f(&self) -> Result<[DenseTensor; 3]> {
        per_alpha(|a| structural_f_from(&self.cov_j[a.index()], &self.g))
    }

    pub fn lie_theta(&self) -> Result<[DVector<f64>; 3]> {
        let f = self.structural_f()?;
        per_alpha(|a| lie_theta_from(&f[a.index()], &self.g))
    }

    /// `(N_α, N*_α)` from `∇J_α`.
    pub fn nijenhuis(&self, alpha: Alpha) -> Result<(DenseTensor, DenseTensor)> {
        nijenhuis_from_covj(&self.cov_j[alpha.index()], self.h.get(alpha))
    }

    pub fn extract(&self) -> Result<OmegaTriple> {
        extract_omegas(&self.cov_j, &self.h, &self.g)
    }
}

fn check_omegas(omega: &[DVector<f64>; 3], d: usize) -> Result<()> {
    if omega.iter().any(|w| w.len() != d) {
        return Err(Error::Shape(format!("1-forms must have {d} components")));
    }
    Ok(())
}

/// `ω ∘ J`.
fn after(omega: &DVector<f64>, j: &DMatrix<f64>) -> DVector<f64> {
    j.transpose() * omega
}

fn n_of(d: usize) -> f64 {
    (d / 4) as f64
}

/// `∇_x J_α = ω_γ(x) J_β − ω_β(x) J_γ` for the given 1-forms.
pub fn build_qk_covj(h: &HTriple, omega: &[DVector<f64>; 3]) -> Result<[DenseTensor; 3]> {
    let d = h.dim();
    check_omegas(omega, d)?;
    per_alpha(|alpha| {
        let (b, c) = alpha.cyclic();
        let (jb, jc) = (h.get(b), h.get(c));
        let (wb, wc) = (&omega[b.index()], &omega[c.index()]);
        let mats: Vec<DMatrix<f64>> = (0..d).map(|x| jb * wc[x] - jc * wb[x]).collect();
        DenseTensor::from_endomorphisms(&mats)
    })
}

/// Recovers `ω_α` from `∇J_α`.
///
/// Each `ω` appears in two of the three `∇J_α`. With `tr J_β² = −4n` and
/// `tr J_β J_γ = 0`, the trace pairing gives `ω_γ(x) = −tr(J_β ∇_xJ_α)/4n` and
/// `ω_β(x) = tr(J_γ ∇_xJ_α)/4n`; the two estimates of each form are averaged.
/// A per-`x` least-squares solve of the stacked system is the cross-check.
pub fn extract_omegas(cov_j: &[DenseTensor; 3], h: &HTriple, g: &MetricBundle) -> Result<OmegaTriple> {
    let d = h.dim();
    if g.dim() != d {
        return Err(Error::Shape("metric and structures differ in dimension".into()));
    }
    for t in cov_j {
        if t.dim() != d || t.variance() != [Variance::Co, Variance::Co, Variance::Contra] {
            return Err(Error::Shape("∇J must be a (x, y, value) tensor of the structures' dimension".into()));
        }
    }
    let four_n = 4.0 * n_of(d);
    let a: Vec<Vec<DMatrix<f64>>> = cov_j.iter().map(|t| t.endomorphisms()).collect::<Result<_>>()?;
    let mut sum = [DVector::zeros(d), DVector::zeros(d), DVector::zeros(d)];
    for alpha in Alpha::ALL {
        let (b, c) = alpha.cyclic();
        for x in 0..d {
            let ax = &a[alpha.index()][x];
            sum[c.index()][x] += -(h.get(b) * ax).trace() / four_n;
            sum[b.index()][x] += (h.get(c) * ax).trace() / four_n;
        }
    }
    let omega = sum.map(|s| s * 0.5);
    let mut residual = 0.0_f64;
    for alpha in Alpha::ALL {
        let (b, c) = alpha.cyclic();
        for x in 0..d {
            let model = h.get(b) * omega[c.index()][x] - h.get(c) * omega[b.index()][x];
            residual = residual.max(matrix_max_abs(&(&a[alpha.index()][x] - model)));
        }
    }
    // Least squares: unknowns (ω₁(x), ω₂(x), ω₃(x)), equations all entries of the three ∇_xJ_α.
    let block = d * d;
    let mut design = DMatrix::zeros(3 * block, 3);
    for alpha in Alpha::ALL {
        let (b, c) = alpha.cyclic();
        let rows = alpha.index() * block;
        for (col, sign, j) in [(c.index(), 1.0, h.get(b)), (b.index(), -1.0, h.get(c))] {
            for (e, v) in j.iter().enumerate() {
                design[(rows + e, col)] += sign * v;
            }
        }
    }
    let svd = design.svd(true, true);
    let mut lsq_discrepancy = 0.0_f64;
    for x in 0..d {
        let mut rhs = DVector::zeros(3 * block);
        for alpha in Alpha::ALL {
            for (e, v) in a[alpha.index()][x].iter().enumerate() {
                rhs[alpha.index() * block + e] = *v;
            }
        }
        let sol = svd
            .solve(&rhs, 1e-12)
            .map_err(|e| Error::Other(format!("least-squares fit failed: {e}")))?;
        for k in 0..3 {
            lsq_discrepancy = lsq_discrepancy.max((sol[k] - omega[k][x]).abs());
        }
    }
    let big_omega = omega.clone().map(|w| g.raise_covector(&w));
    Ok(OmegaTriple {
        omega,
        big_omega,
        residual,
        lsq_discrepancy,
    })
}

/// `η_β(x, y) = dω_β(x, y) + ω_γ(x) ω_α(y) − ω_α(x) ω_γ(y)` for cyclic `(α, β, γ)`.
pub fn eta_forms(omega: &[DVector<f64>; 3], domega: &[DMatrix<f64>; 3]) -> Result<[DMatrix<f64>; 3]> {
    let d = domega[0].nrows();
    check_omegas(omega, d)?;
    if domega.iter().any(|m| m.nrows() != d || m.ncols() != d) {
        return Err(Error::Shape("dω must be square of the 1-forms' dimension".into()));
    }
    per_alpha(|beta| {
        // β's successor is γ and its predecessor is α.
        let (gamma, alpha) = beta.cyclic();
        let (wa, wc) = (&omega[alpha.index()], &omega[gamma.index()]);
        Ok(&domega[beta.index()] + wc * wa.transpose() - wa * wc.transpose())
    })
}

/// `dω_α` of a field of 1-form triples on the `nested_step` stencil, honouring
/// the chart's exterior-derivative convention.
pub fn omega_exterior_derivative(
    m: &ChartManifold,
    field: &(dyn Fn(&[f64]) -> Result<[DVector<f64>; 3]> + Sync),
    p: &[f64],
) -> Result<[DMatrix<f64>; 3]> {
    m.check_interior(p, m.curvature_reach())?;
    let d = m.dim();
    let f = |q: &[f64]| -> Result<Vec<f64>> {
        let w = field(q)?;
        check_omegas(&w, d)?;
        Ok(w.iter().flat_map(|v| v.iter().copied()).collect())
    };
    // dw[m][a * d + i] = ∂_m ω_a(e_i)
    let dw: Vec<Vec<f64>> = (0..d)
        .map(|axis| m.partial(&f, p, axis, m.fd().nested_step))
        .collect::<Result<_>>()?;
    let factor = if m.conventions().half_exterior { 0.5 } else { 1.0 };
    Ok([0, 1, 2].map(|a| {
        DMatrix::from_fn(d, d, |x, y| factor * (dw[x][a * d + y] - dw[y][a * d + x]))
    }))
}

/// `ω_α` extracted from the chart's `∇J_α` at `q`.
pub fn extracted_omegas(m: &ChartManifold, q: &[f64]) -> Result<[DVector<f64>; 3]> {
    Ok(extract_omegas(&m.cov_deriv_triple(q)?, &m.triple_at(q)?, &m.metric_at(q)?)?.omega)
}

fn product(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DenseTensor {
    let d = a.nrows();
    DenseTensor::from_fn(d, &[Variance::Co; 4], |i| a[(i[0], i[1])] * b[(i[2], i[3])]).expect("validated dim")
}

fn eval4(r: &DenseTensor, v: [&DVector<f64>; 4]) -> f64 {
    let d = r.dim();
    let mut acc = 0.0;
    for i in 0..d {
        for j in 0..d {
            let ab = v[0][i] * v[1][j];
            if ab == 0.0 {
                continue;
            }
            for k in 0..d {
                let abc = ab * v[2][k];
                if abc == 0.0 {
                    continue;
                }
                for l in 0..d {
                    acc += abc * v[3][l] * r.get(&[i, j, k, l]);
                }
            }
        }
    }
    acc
}

/// Residuals of the curvature identities of a quaternionic Kähler structure,
/// each as `max|lhs − rhs| / max(1, max|R|)`.
///
/// `ricci` is `ρ(y, z) = g^{ij} R(e_i, y, z, e_j)`; `eta` holds `η₁, η₂, η₃`
/// (on a genuine quaternionic Kähler structure `η₂ = η₃ = 0`). `seed` fixes the
/// random vectors of the `A(x, z)` identity.
pub fn curvature_identities(
    r: &DenseTensor,
    ricci: &DMatrix<f64>,
    eta: &[DMatrix<f64>; 3],
    g: &MetricBundle,
    h: &HTriple,
    seed: u64,
) -> Result<BTreeMap<String, f64>> {
    let d = g.dim();
    if r.dim() != d || r.rank() != 4 || h.dim() != d || ricci.nrows() != d {
        return Err(Error::Shape("curvature data and structures differ in dimension".into()));
    }
    let n = n_of(d);
    let norm = r.max_abs().max(1.0);
    let gm = g.g();
    let j = h.all();
    let ga = per_alpha(|a| Ok(associated_matrix(g, h, a)))?;
    let tau = (g.g_inv() * ricci).trace();
    let mut out = BTreeMap::new();
    let mut put = |label: &str, v: f64| {
        let e = out.entry(label.to_string()).or_insert(0.0_f64);
        *e = e.max(v / norm);
    };

    for alpha in Alpha::ALL {
        let (b, c) = alpha.cyclic();
        let (ai, bi, ci) = (alpha.index(), b.index(), c.index());
        // R(x,y,J_αz,w) + ε_α R(x,y,z,J_αw) + η_β(x,y) g_γ(z,w) − η_γ(x,y) g_β(z,w)
        let rj = r
            .compose_slot(2, &j[ai])?
            .combine(1.0, &r.compose_slot(3, &j[ai])?, alpha.eps())?
            .add(&product(&eta[bi], &ga[ci]))?
            .sub(&product(&eta[ci], &ga[bi]))?;
        put(EQ_RJ, rj.max_abs());
        let back = compose_back_pair(r, &j[ai])?;
        let rjj = r
            .combine(1.0, &back, -alpha.eps())?
            .sub(&product(&eta[bi], &ga[bi]))?
            .sub(&product(&eta[ci], &ga[ci]))?;
        put(EQ_RJJ, rjj.max_abs());
    }
    put(LEMMA_D_OM, matrix_max_abs(&eta[1]).max(matrix_max_abs(&eta[2])));

    let (j1, j2, j3) = (&j[0], &j[1], &j[2]);
    let (g1, eta1) = (&ga[0], &eta[0]);
    put(EQ_RJJ1, compose_back_pair(r, j1)?.sub(r)?.max_abs());
    let j1t_rho = j1.transpose() * ricci; // ρ(J₁x, y)
    for jx in [j2, j3] {
        let back = compose_back_pair(r, jx)?;
        put(EQ_RJJ23, back.add(r)?.sub(&product(eta1, g1))?.max_abs());
        put(EQ_RJJ23R, back.add(r)?.add(&product(&j1t_rho, g1).scaled(1.0 / n))?.max_abs());
        put(EQ_RJJ23T, back.add(r)?.add(&product(g1, g1).scaled(tau / (4.0 * n * n)))?.max_abs());
        let hybrid = matrix_max_abs(&(jx.transpose() * ricci * jx + ricci));
        put(RHO_HYBRID, hybrid);
        put(EQ_RHO4J23, (n * n - 1.0) * hybrid);
        // R(J x, J y, J z, J w) = R − (1/n) g(x, J₁y) ρ(J₁z, w) + (1/n) ρ(J₂x, J₃y) g(J₁z, w)
        let four = compose_front_pair(&back, jx)?;
        let rhs = r
            .sub(&product(&(gm * j1), &j1t_rho).scaled(1.0 / n))?
            .add(&product(&(j2.transpose() * ricci * j3), g1).scaled(1.0 / n))?;
        put(EQ_RJJJJ23, four.sub(&rhs)?.max_abs());
    }
    // g^{ij} R(x, y, e_i, J₁ e_j) = 2n η₁(x, y)
    let trace = contract(&r.compose_slot(3, j1)?, 2, 3, g)?.to_matrix()?;
    put(EQ_A_ETA, matrix_max_abs(&(trace - eta1 * (2.0 * n))));
    put(LEMMA_RHO_ETA, matrix_max_abs(&(ricci - j1.transpose() * eta1 * n)));
    put(EQ_ETA_RHO, matrix_max_abs(&(eta1 - ricci * j1 / n)));
    put(EQ_ETA_J1, matrix_max_abs(&(eta1 * j1 + j1.transpose() * eta1)));
    put(EQ_RHO_JJ1, matrix_max_abs(&(j1.transpose() * ricci * j1 - ricci)));
    put(EQ_RJJJJ1, compose_front_pair(&compose_back_pair(r, j1)?, j1)?.sub(r)?.max_abs());

    // A(x,z) = R(x,J₁x,z,J₁z) − R(x,J₁x,J₂z,J₃z) − R(J₂x,J₃x,z,J₁z) + R(J₂x,J₃x,J₂z,J₃z)
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut unit = || {
        let v: DVector<f64> = DVector::from_fn(d, |_, _| StandardNormal.sample(&mut rng));
        let nv = v.norm();
        v / nv
    };
    let mut worst = 0.0_f64;
    for _ in 0..A_IDENTITY_PAIRS {
        let (x, z) = (unit(), unit());
        let (j1x, j2x, j3x) = (j1 * &x, j2 * &x, j3 * &x);
        let (j1z, j2z, j3z) = (j1 * &z, j2 * &z, j3 * &z);
        let a = eval4(r, [&x, &j1x, &z, &j1z]) - eval4(r, [&x, &j1x, &j2z, &j3z]) - eval4(r, [&j2x, &j3x, &z, &j1z])
            + eval4(r, [&j2x, &j3x, &j2z, &j3z]);
        let (rxx, rzz) = ((x.transpose() * ricci * &x)[0], (z.transpose() * ricci * &z)[0]);
        let (gxx, gzz) = (g.inner(&x, &x), g.inner(&z, &z));
        worst = worst.max((a + 2.0 / n * rxx * gzz).abs()).max((a + 2.0 / n * gxx * rzz).abs());
    }
    put(A_IDENTITY, worst);
    let einstein = einstein_check(ricci, g, tau, d / 4, 0.0);
    out.insert(THM_EINSTEIN.to_string(), einstein.residual);
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EinsteinVerdict {
    pub residual: f64,
    pub lambda: f64,
    pub tolerance: f64,
    pub pass: bool,
    /// `false` at dimension 4, where the theorem does not apply.
    pub theorem_applies: bool,
    pub note: Option<String>,
}

/// `‖ρ − (τ/4n) g‖_∞ / max(1, ‖ρ‖_∞)` with `λ = τ/4n`.
pub fn einstein_check(ricci: &DMatrix<f64>, g: &MetricBundle, tau: f64, n: usize, tol: f64) -> EinsteinVerdict {
    let lambda = tau / (4.0 * n as f64);
    let residual = matrix_max_abs(&(ricci - g.g() * lambda)) / matrix_max_abs(ricci).max(1.0);
    let theorem_applies = n > 1;
    EinsteinVerdict {
        residual,
        lambda,
        tolerance: tol,
        pass: residual <= tol,
        theorem_applies,
        note: (!theorem_applies).then(|| {
            "dimension 4: the Einstein property is only asserted for dimension >= 8, where the Ricci tensor is hybrid with respect to J2 and J3".to_string()
        }),
    }
}

/// A vanishing equivalence checked in both directions within a band.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Equivalence {
    pub label: String,
    pub left_label: String,
    pub left: f64,
    pub right_label: String,
    pub right: f64,
    pub tolerance: f64,
    pub band: f64,
    /// `left ≤ tol ⇒ right ≤ band·tol`
    pub forward: bool,
    /// `right ≤ tol ⇒ left ≤ band·tol`
    pub backward: bool,
    /// `false` when the statement is outside its dimension range; reported only.
    pub applies: bool,
}

impl Equivalence {
    #[allow(clippy::too_many_arguments)]
    pub fn new(label: &str, left_label: &str, left: f64, right_label: &str, right: f64, tol: f64, band: f64, applies: bool) -> Self {
        let bound = band * tol;
        Self {
            label: label.to_string(),
            left_label: left_label.to_string(),
            left,
            right_label: right_label.to_string(),
            right,
            tolerance: tol,
            band,
            forward: left > tol || right <= bound,
            backward: right > tol || left <= bound,
            applies,
        }
    }

    pub fn holds(&self) -> bool {
        self.forward && self.backward
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FlatnessReport {
    pub flat: Verdict,
    pub ricci_flat: Verdict,
    pub scalar_flat: Verdict,
    pub kahler_type: Verdict,
    /// `max|η₁|`, the defect of `dω₁ = −ω₂ ∧ ω₃`.
    pub eta1: f64,
    pub equivalences: Vec<Equivalence>,
}

impl FlatnessReport {
    pub fn holds(&self) -> bool {
        self.equivalences.iter().all(|e| !e.applies || e.holds())
    }
}

/// Flatness, Ricci-flatness, scalar-flatness and Kähler type of quaternionic
/// Kähler curvature data, with the four equivalences
/// `R Kähler-type ⇔ η₁ = 0`, `R = 0 ⇔ η₁ = 0`, `R = 0 ⇔ ρ = 0` and
/// `R = 0 ⇔ τ = 0` (the last only for dimension ≥ 8).
pub fn flatness_and_scalar_checks(
    r: &DenseTensor,
    ricci: &DMatrix<f64>,
    tau: f64,
    eta1: &DMatrix<f64>,
    h: &HTriple,
    tol: f64,
    band: f64,
) -> Result<FlatnessReport> {
    let kt = kahler_type_residual(r, h)?;
    let (rm, pm, e1) = (r.max_abs(), matrix_max_abs(ricci), matrix_max_abs(eta1));
    Ok(assemble_flatness(rm, pm, tau.abs(), kt, e1, h.dim() / 4, tol, band))
}

#[allow(clippy::too_many_arguments)]
fn assemble_flatness(rm: f64, pm: f64, tm: f64, kt: f64, e1: f64, n: usize, tol: f64, band: f64) -> FlatnessReport {
    let equivalences = vec![
        Equivalence::new("Lemma-Rkel", "kahler-type", kt, "eta1", e1, tol, band, true),
        Equivalence::new("Prop-R=0", "eta1", e1, "R", rm, tol, band, true),
        Equivalence::new("Prop-r=0", "ricci", pm, "R", rm, tol, band, true),
        Equivalence::new("Prop-t=0", "tau", tm, "R", rm, tol, band, n > 1),
    ];
    FlatnessReport {
        flat: Verdict::new(rm, tol),
        ricci_flat: Verdict::new(pm, tol),
        scalar_flat: Verdict::new(tm, tol),
        kahler_type: Verdict::new(kt, tol),
        eta1: e1,
        equivalences,
    }
}

/// Kähler-type defect forced by `R(x,y,J_αz,J_αw) + R(x,y,z,w) = η₁(x,y) g₁(z,w)`:
/// `max|η₁ ⊗ g₁| = max|η₁| · max|g₁|`.
pub fn implied_kahler_residual(eta1: &DMatrix<f64>, g1: &DMatrix<f64>) -> f64 {
    matrix_max_abs(eta1) * matrix_max_abs(g1)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IsotropyReport {
    /// `g(Ω_α, Ω_α) = ω_α(Ω_α)`.
    pub omega_square: [f64; 3],
    /// `4n {ε_β ω_γ(Ω_γ) + ε_γ ω_β(Ω_β)}`.
    pub norm_formula: [f64; 3],
    /// `‖∇J_α‖²` contracted directly.
    pub norm_direct: [f64; 3],
    pub formula_residual: f64,
    pub norms_vanish: bool,
    pub omegas_null: bool,
    pub hyper_kahler: bool,
    /// `‖∇J‖² = 0` for all `α` without `∇J = 0`.
    pub isotropic_hyper_kahler: bool,
    /// `norms_vanish ⇔ omegas_null`.
    pub consistent: bool,
    /// When `ω₂ = ω₃ = 0`: `max_{α=2,3} |‖∇J_α‖² + 4n ω₁(Ω₁)|`.
    pub w1w3_residual: Option<f64>,
}

/// Square norms of `∇J_α` against the null-ness of `Ω_α`. Tolerances are
/// relative to `max(1, max|ω|²)`.
pub fn isotropy_check(omega: &OmegaTriple, g: &MetricBundle, cov_j: &[DenseTensor; 3], tol: f64) -> Result<IsotropyReport> {
    let d = g.dim();
    check_omegas(&omega.omega, d)?;
    let four_n = 4.0 * n_of(d);
    let q = [0, 1, 2].map(|a| omega.omega[a].dot(&omega.big_omega[a]));
    let formula = Alpha::ALL.map(|alpha| {
        let (b, c) = alpha.cyclic();
        four_n * (b.eps() * q[c.index()] + c.eps() * q[b.index()])
    });
    let direct = per_alpha(|a| square_norm_nabla_j(&cov_j[a.index()], g))?;
    let scale = omega.omega.iter().fold(1.0_f64, |m, w| m.max(w.amax() * w.amax()));
    let formula_residual = (0..3).fold(0.0_f64, |m, a| m.max((formula[a] - direct[a]).abs())) / scale;
    let norms_vanish = direct.iter().all(|v| v.abs() <= tol * scale);
    let omegas_null = q.iter().all(|v| v.abs() <= tol * scale);
    let hyper_kahler = cov_j.iter().all(|t| t.max_abs() <= tol);
    let w23 = omega.omega[1].amax().max(omega.omega[2].amax());
    let w1w3_residual = (w23 <= tol).then(|| {
        let target = -four_n * q[0];
        (direct[1] - target).abs().max((direct[2] - target).abs()) / scale
    });
    Ok(IsotropyReport {
        omega_square: q,
        norm_formula: formula,
        norm_direct: direct,
        formula_residual,
        norms_vanish,
        omegas_null,
        hyper_kahler,
        isotropic_hyper_kahler: norms_vanish && !hyper_kahler,
        consistent: norms_vanish == omegas_null,
        w1w3_residual,
    })
}

/// `(N_α, N*_α)` of a quaternionic Kähler structure directly from `ω`:
/// `N_α(x,y) = −a(x) J_γy − b(x) J_βy + a(y) J_γx + b(y) J_βx` with
/// `a = ω_γ + ω_β ∘ J_α`, `b = ω_β − ω_γ ∘ J_α`; `N*_α` flips the signs of the last two terms.
pub fn nijenhuis_closed_form(omega: &[DVector<f64>; 3], h: &HTriple, alpha: Alpha) -> Result<(DenseTensor, DenseTensor)> {
    let d = h.dim();
    check_omegas(omega, d)?;
    let (b, c) = alpha.cyclic();
    let ja = h.get(alpha);
    let (jb, jc) = (h.get(b), h.get(c));
    let (wb, wc) = (&omega[b.index()], &omega[c.index()]);
    let av = wc + after(wb, ja);
    let bv = wb - after(wc, ja);
    let build = |sign: f64| {
        DenseTensor::from_fn(d, &[Variance::Co, Variance::Co, Variance::Contra], |i| {
            let (x, y, k) = (i[0], i[1], i[2]);
            -av[x] * jc[(k, y)] - bv[x] * jb[(k, y)] + sign * (av[y] * jc[(k, x)] + bv[y] * jb[(k, x)])
        })
    };
    Ok((build(1.0)?, build(-1.0)?))
}

/// `θ_α(z) = −ε_β ω_γ(J_β z) + ε_γ ω_β(J_γ z)`.
pub fn qk_theta(omega: &[DVector<f64>; 3], h: &HTriple) -> Result<[DVector<f64>; 3]> {
    check_omegas(omega, h.dim())?;
    per_alpha(|alpha| {
        let (b, c) = alpha.cyclic();
        Ok(after(&omega[c.index()], h.get(b)) * (-b.eps()) + after(&omega[b.index()], h.get(c)) * c.eps())
    })
}

/// `F_α(x,y,z) = ω_γ(x) g(J_β y, z) − ω_β(x) g(J_γ y, z)`.
pub fn qk_structural_f(omega: &[DVector<f64>; 3], g: &MetricBundle, h: &HTriple) -> Result<[DenseTensor; 3]> {
    check_omegas(omega, h.dim())?;
    let ga = per_alpha(|a| Ok(associated_matrix(g, h, a)))?;
    per_alpha(|alpha| {
        let (b, c) = alpha.cyclic();
        let (wb, wc) = (&omega[b.index()], &omega[c.index()]);
        let (gb, gc) = (&ga[b.index()], &ga[c.index()]);
        DenseTensor::from_fn(h.dim(), &[Variance::Co; 3], |i| {
            wc[i[0]] * gb[(i[1], i[2])] - wb[i[0]] * gc[(i[1], i[2])]
        })
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OmegaRelations {
    /// Per `α`: `max(|ω_α − ω_β∘J_γ|, |ω_α + ω_γ∘J_β|)`.
    pub usl_residuals: [f64; 3],
    /// Per `α`: `|ω_γ + ω_β∘J_α|`, the condition for `N_α = N*_α = 0`.
    pub integrability_residuals: [f64; 3],
    /// Per `α`: `max(|N_α|, |N*_α|)` from the closed form.
    pub nijenhuis: [f64; 3],
    pub tolerance: f64,
    pub pass: bool,
}

/// The relations `ω_α = ω_β∘J_γ = −ω_γ∘J_β` and the Nijenhuis tensors they control.
pub fn hypercomplex_omega_relations(omega: &[DVector<f64>; 3], h: &HTriple, tol: f64) -> Result<OmegaRelations> {
    check_omegas(omega, h.dim())?;
    let mut usl = [0.0; 3];
    let mut integ = [0.0; 3];
    let mut nij = [0.0; 3];
    for alpha in Alpha::ALL {
        let (b, c) = alpha.cyclic();
        let (wa, wb, wc) = (&omega[alpha.index()], &omega[b.index()], &omega[c.index()]);
        usl[alpha.index()] = (wa - after(wb, h.get(c))).amax().max((wa + after(wc, h.get(b))).amax());
        integ[alpha.index()] = (wc + after(wb, h.get(alpha))).amax();
        let (n, ns) = nijenhuis_closed_form(omega, h, alpha)?;
        nij[alpha.index()] = n.max_abs().max(ns.max_abs());
    }
    let pass = usl.iter().all(|v| *v <= tol);
    Ok(OmegaRelations {
        usl_residuals: usl,
        integrability_residuals: integ,
        nijenhuis: nij,
        tolerance: tol,
        pass,
    })
}

/// `ω₁` free, `ω₃ = ω₁∘J₂`, `ω₂ = −ω₁∘J₃`: the unique completion satisfying
/// `ω_α = ω_β∘J_γ = −ω_γ∘J_β`.
pub fn usl_completion(omega1: &DVector<f64>, h: &HTriple) -> [DVector<f64>; 3] {
    [
        omega1.clone(),
        -after(omega1, h.get(Alpha::Three)),
        after(omega1, h.get(Alpha::Two)),
    ]
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct QkOptions {
    pub tol: f64,
    pub band: f64,
    pub seed: u64,
    /// Also compute `∇ρ` and `∂τ` (a further level of differences).
    pub curvature_derivatives: bool,
}

impl Default for QkOptions {
    fn default() -> Self {
        Self {
            tol: 1e-6,
            band: DEFAULT_BAND,
            seed: 0,
            curvature_derivatives: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QkPointReport {
    pub point: Vec<f64>,
    pub omega: OmegaTriple,
    #[serde(serialize_with = "ser::matrices3")]
    pub eta: [DMatrix<f64>; 3],
    pub curvature_max: f64,
    pub ricci_max: f64,
    pub tau: f64,
    pub kahler_type_residual: f64,
    pub identities: BTreeMap<String, f64>,
    pub einstein: EinsteinVerdict,
    pub isotropy: IsotropyReport,
    pub ricci_derivative: Option<f64>,
    pub tau_gradient: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QkVerdicts {
    pub einstein: Verdict,
    pub flat: Verdict,
    pub ricci_flat: Verdict,
    pub scalar_flat: Verdict,
    pub kahler_type: Verdict,
    pub isotropic: bool,
    pub ricci_symmetric: Option<Verdict>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QkReport {
    pub dim: usize,
    pub tolerance: f64,
    pub quaternionic_kahler: bool,
    pub qk_residual: f64,
    pub lsq_discrepancy: f64,
    /// Max over points; empty when the input is not quaternionic Kähler.
    pub identity_residuals: BTreeMap<String, f64>,
    /// Labels reported but excluded from pass/fail.
    pub informational: Vec<String>,
    pub verdicts: Option<QkVerdicts>,
    pub einstein_lambda: Option<f64>,
    pub equivalences: Vec<Equivalence>,
    pub diagnostics: Vec<String>,
    pub points: Vec<QkPointReport>,
}

impl QkReport {
    /// Quaternionic Kähler at every point, every applicable identity within
    /// tolerance, every applicable equivalence holding, and Einstein for `n > 1`.
    pub fn passes(&self) -> bool {
        if !self.quaternionic_kahler {
            return false;
        }
        let ids = self
            .identity_residuals
            .iter()
            .all(|(k, v)| self.informational.contains(k) || *v <= self.tolerance);
        let eq = self.equivalences.iter().all(|e| !e.applies || e.holds());
        let einstein = self.dim < 8 || self.verdicts.as_ref().is_some_and(|v| v.einstein.pass);
        ids && eq && einstein
    }
}

fn max_into(acc: &mut BTreeMap<String, f64>, other: &BTreeMap<String, f64>) {
    for (k, v) in other {
        let e = acc.entry(k.clone()).or_insert(0.0);
        *e = e.max(*v);
    }
}

fn analyze_point(m: &ChartManifold, p: &[f64], opts: &QkOptions) -> Result<QkPointReport> {
    let pc = m.point_calculus(p)?;
    let omega = extract_omegas(&pc.cov_j, &pc.triple, &pc.metric)?;
    let domega = omega_exterior_derivative(m, &|q: &[f64]| extracted_omegas(m, q), p)?;
    let eta = eta_forms(&omega.omega, &domega)?;
    let mut identities = curvature_identities(&pc.r4, &pc.ricci, &eta, &pc.metric, &pc.triple, opts.seed)?;
    identities.insert(EQ_QK.to_string(), omega.residual);
    let einstein = einstein_check(&pc.ricci, &pc.metric, pc.tau, m.n(), opts.tol);
    let isotropy = isotropy_check(&omega, &pc.metric, &pc.cov_j, opts.tol)?;
    let kt = kahler_type_residual(&pc.r4, &pc.triple)?;
    let (ricci_derivative, tau_gradient) = if opts.curvature_derivatives {
        let nabla_rho = m.ricci_covariant_derivative(p)?.max_abs();
        let dtau = m.scalar_gradient(&|q: &[f64]| m.curvature(q).map(|c| c.tau), p)?.amax();
        (Some(nabla_rho), Some(dtau))
    } else {
        (None, None)
    };
    Ok(QkPointReport {
        point: p.to_vec(),
        omega,
        eta,
        curvature_max: pc.r4.max_abs(),
        ricci_max: matrix_max_abs(&pc.ricci),
        tau: pc.tau,
        kahler_type_residual: kt,
        identities,
        einstein,
        isotropy,
        ricci_derivative,
        tau_gradient,
    })
}

/// Extracts `ω` at every point, then (if the structure is quaternionic
/// Kähler everywhere) evaluates the identities and verdicts. Points are
/// processed in parallel and reported in the given order.
pub fn verify_qk_identities(m: &ChartManifold, points: &[Vec<f64>], opts: &QkOptions) -> Result<QkReport> {
    if points.is_empty() {
        return Err(Error::Other("no sample points".into()));
    }
    let d = m.dim();
    let tol = opts.tol;
    let fits: Vec<OmegaTriple> = points
        .par_iter()
        .map(|p| {
            m.check_interior(p, m.deepest_reach().max(m.curvature_reach()))?;
            extract_omegas(&m.cov_deriv_triple(p)?, &m.triple_at(p)?, &m.metric_at(p)?)
        })
        .collect::<Result<_>>()?;
    let qk_residual = fits.iter().fold(0.0_f64, |a, f| a.max(f.residual));
    let lsq_discrepancy = fits.iter().fold(0.0_f64, |a, f| a.max(f.lsq_discrepancy));
    let informational: Vec<String> = if d < 8 {
        NEEDS_N_GT_1.iter().map(|s| s.to_string()).collect()
    } else {
        Vec::new()
    };
    let mut diagnostics = Vec::new();
    if d < 8 {
        diagnostics.push("dimension 4: statements restricted to dimension >= 8 are reported informationally".into());
    }
    if qk_residual > tol {
        diagnostics.push(format!(
            "not quaternionic Kähler: extraction residual {qk_residual:e} exceeds {tol:e}; identity checks skipped"
        ));
        return Ok(QkReport {
            dim: d,
            tolerance: tol,
            quaternionic_kahler: false,
            qk_residual,
            lsq_discrepancy,
            identity_residuals: BTreeMap::new(),
            informational,
            verdicts: None,
            einstein_lambda: None,
            equivalences: Vec::new(),
            diagnostics,
            points: Vec::new(),
        });
    }
    let reports: Vec<QkPointReport> = points
        .par_iter()
        .map(|p| analyze_point(m, p, opts))
        .collect::<Result<_>>()?;
    let mut identity_residuals = BTreeMap::new();
    for r in &reports {
        max_into(&mut identity_residuals, &r.identities);
    }
    let fold = |f: &dyn Fn(&QkPointReport) -> f64| reports.iter().fold(0.0_f64, |a, r| a.max(f(r)));
    let rm = fold(&|r| r.curvature_max);
    let pm = fold(&|r| r.ricci_max);
    let tm = fold(&|r| r.tau.abs());
    let kt = fold(&|r| r.kahler_type_residual);
    let e1 = fold(&|r| matrix_max_abs(&r.eta[0]));
    let flatness = assemble_flatness(rm, pm, tm, kt, e1, m.n(), tol, opts.band);
    let einstein_res = fold(&|r| r.einstein.residual);
    let lambda = reports.iter().map(|r| r.einstein.lambda).sum::<f64>() / reports.len() as f64;
    let ricci_symmetric = opts
        .curvature_derivatives
        .then(|| Verdict::new(fold(&|r| r.ricci_derivative.unwrap_or(0.0)), tol));
    let isotropic = reports.iter().all(|r| r.isotropy.norms_vanish);
    if reports.iter().any(|r| !r.isotropy.consistent) {
        diagnostics.push("square norms of ∇J and null-ness of Ω disagree at some point".into());
    }
    Ok(QkReport {
        dim: d,
        tolerance: tol,
        quaternionic_kahler: true,
        qk_residual,
        lsq_discrepancy,
        identity_residuals,
        informational,
        verdicts: Some(QkVerdicts {
            einstein: Verdict::new(einstein_res, tol),
            flat: flatness.flat,
            ricci_flat: flatness.ricci_flat,
            scalar_flat: flatness.scalar_flat,
            kahler_type: flatness.kahler_type,
            isotropic,
            ricci_symmetric,
        }),
        einstein_lambda: Some(lambda),
        equivalences: flatness.equivalences,
        diagnostics,
        points: reports,
    })
}

/// What `w1w3_analysis` requires before running.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub enum W1W3Gate {
    /// Quaternionic Kähler with `ω₂ = ω₃ = 0`: the covariant-derivative pattern
    /// the class is claimed to force.
    #[default]
    QuaternionicKahler,
    /// Membership in `W₁ ⊕ W₃` for both `J₂` and `J₃` (and quaternionic Kähler).
    ClassMembership,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct W1W3Report {
    pub gate: W1W3Gate,
    pub dim: usize,
    pub tolerance: f64,
    /// `W0(J1)`, `W1+W3(J2)`, `W1+W3(J3)`, `W3(J2)`, `W3(J3)`, max over points.
    pub class_residuals: BTreeMap<String, f64>,
    pub checks: BTreeMap<String, f64>,
    pub informational: Vec<String>,
    pub tau_spread: f64,
    pub flat: Verdict,
    /// Flat ⇔ the `dθ` identity for `α = 2, 3`.
    pub dtheta_flat: Equivalence,
}

impl W1W3Report {
    pub fn passes(&self) -> bool {
        self.checks
            .iter()
            .all(|(k, v)| self.informational.contains(k) || *v <= self.tolerance)
            && self.dtheta_flat.holds()
    }
}

pub const EQ_OM23: &str = "Eq-om23";
pub const EQ_F123: &str = "Eq-F123";
pub const EQ_OM1_TAU: &str = "Eq-om1==";
pub const TAU_CONSTANT: &str = "tau-constant";
pub const PROP_RIC_SYM: &str = "Prop-Ric-sym";
pub const COR_DTHETA: &str = "Cor-dtheta";
pub const SQUARE_NORM_J23: &str = "square-norm-J23";

/// `dθ(x,y) + dθ(J₁x,J₁y) − dθ(J₂x,J₂y) − dθ(J₃x,J₃y)`.
fn dtheta_combination(dt: &DMatrix<f64>, h: &HTriple) -> DMatrix<f64> {
    let c = |j: &DMatrix<f64>| j.transpose() * dt * j;
    dt + c(h.get(Alpha::One)) - c(h.get(Alpha::Two)) - c(h.get(Alpha::Three))
}

/// Checks the package of consequences for structures with
/// `∇J₁ = 0`, `∇J₂ = ω₁ ⊗ J₃`, `∇J₃ = −ω₁ ⊗ J₂`.
pub fn w1w3_analysis(m: &ChartManifold, points: &[Vec<f64>], gate: W1W3Gate, opts: &QkOptions) -> Result<W1W3Report> {
    if points.is_empty() {
        return Err(Error::Other("no sample points".into()));
    }
    let tol = opts.tol;
    let d = m.dim();
    let n = n_of(d);
    let cls = classify_chart(m, points, tol)?;
    let mut class_residuals = BTreeMap::new();
    let r = |a: usize, c: &str| cls.reports[a].residual(c).unwrap_or(f64::INFINITY);
    class_residuals.insert(format!("{W0}(J1)"), r(0, W0));
    class_residuals.insert(format!("{W1_W3}(J2)"), r(1, W1_W3));
    class_residuals.insert(format!("{W1_W3}(J3)"), r(2, W1_W3));
    class_residuals.insert(format!("{W3}(J2)"), r(1, W3));
    class_residuals.insert(format!("{W3}(J3)"), r(2, W3));
    if gate == W1W3Gate::ClassMembership {
        for a in [1, 2] {
            if !cls.reports[a].passes(W1_W3) {
                return Err(Error::Precondition {
                    label: format!("{W1_W3}(J{})", a + 1),
                    residual: r(a, W1_W3),
                    tol,
                });
            }
        }
    }

    struct PointOut {
        checks: BTreeMap<String, f64>,
        tau: f64,
        r_max: f64,
        dtheta: f64,
    }
    let per_point: Vec<PointOut> = points
        .par_iter()
        .map(|p| -> Result<PointOut> {
            let pc = m.point_calculus(p)?;
            let omega = extract_omegas(&pc.cov_j, &pc.triple, &pc.metric)?;
            if omega.residual > tol {
                return Err(Error::NotQuaternionicKahler { residual: omega.residual, tol });
            }
            let w = &omega.omega;
            let h = &pc.triple;
            let mut checks = BTreeMap::new();
            checks.insert(EQ_OM23.to_string(), w[1].amax().max(w[2].amax()));
            let (j2, j3) = (h.get(Alpha::Two), h.get(Alpha::Three));
            let mut f123 = pc.cov_j[0].max_abs();
            for x in 0..d {
                let a2 = pc.cov_j[1].endomorphism_at(x)?;
                let a3 = pc.cov_j[2].endomorphism_at(x)?;
                f123 = f123.max(matrix_max_abs(&(a2 - j3 * w[0][x])));
                f123 = f123.max(matrix_max_abs(&(a3 + j2 * w[0][x])));
            }
            f123 = f123.max((&w[0] + after(&pc.theta[1], j3)).amax());
            f123 = f123.max((&w[0] - after(&pc.theta[2], j2)).amax());
            checks.insert(EQ_F123.to_string(), f123);
            let domega = omega_exterior_derivative(m, &|q: &[f64]| extracted_omegas(m, q), p)?;
            let g1 = associated_matrix(&pc.metric, h, Alpha::One);
            checks.insert(
                EQ_OM1_TAU.to_string(),
                matrix_max_abs(&(&domega[0] + g1 * (pc.tau / (4.0 * n * n)))),
            );
            if opts.curvature_derivatives {
                let dtau = m.scalar_gradient(&|q: &[f64]| m.curvature(q).map(|c| c.tau), p)?.amax();
                checks.insert(TAU_CONSTANT.to_string(), dtau);
                checks.insert(PROP_RIC_SYM.to_string(), m.ricci_covariant_derivative(p)?.max_abs());
            }
            let mut dtheta = 0.0_f64;
            for alpha in [Alpha::Two, Alpha::Three] {
                let dt = m.d_oneform(&|q: &[f64]| m.lie_theta(q, alpha), p)?;
                dtheta = dtheta.max(matrix_max_abs(&dtheta_combination(&dt, h)));
            }
            let iso = isotropy_check(&omega, &pc.metric, &pc.cov_j, tol)?;
            checks.insert(SQUARE_NORM_J23.to_string(), iso.w1w3_residual.unwrap_or(f64::INFINITY));
            Ok(PointOut {
                checks,
                tau: pc.tau,
                r_max: pc.r4.max_abs(),
                dtheta,
            })
        })
        .collect::<Result<_>>()?;
    let mut checks = BTreeMap::new();
    for p in &per_point {
        max_into(&mut checks, &p.checks);
    }
    let tau_min = per_point.iter().map(|p| p.tau).fold(f64::INFINITY, f64::min);
    let tau_max = per_point.iter().map(|p| p.tau).fold(f64::NEG_INFINITY, f64::max);
    let tau_spread = tau_max - tau_min;
    let e = checks.entry(TAU_CONSTANT.to_string()).or_insert(0.0);
    *e = e.max(tau_spread);
    let r_max = per_point.iter().fold(0.0_f64, |a, p| a.max(p.r_max));
    let dtheta = per_point.iter().fold(0.0_f64, |a, p| a.max(p.dtheta));
    let informational = if d < 8 {
        vec![EQ_OM1_TAU.to_string(), TAU_CONSTANT.to_string(), PROP_RIC_SYM.to_string()]
    } else {
        Vec::new()
    };
    Ok(W1W3Report {
        gate,
        dim: d,
        tolerance: tol,
        class_residuals,
        checks,
        informational,
        tau_spread,
        flat: Verdict::new(r_max, tol),
        dtheta_flat: Equivalence::new("Cor-dtheta-flat", "dtheta-identity", dtheta, "R", r_max, tol, opts.band, true),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum ImplicationStatus {
    Holds,
    /// The hypothesis is not satisfied.
    Vacuous,
    Violated,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ImplicationRecord {
    pub label: String,
    pub hypothesis: f64,
    pub conclusion: f64,
    pub status: ImplicationStatus,
    /// Intermediate relations asserted along the way.
    pub intermediate: BTreeMap<String, f64>,
}

impl ImplicationRecord {
    fn new(label: &str, hypothesis: f64, conclusion: f64, tol: f64, band: f64, intermediate: BTreeMap<String, f64>) -> Self {
        let status = if hypothesis > tol {
            ImplicationStatus::Vacuous
        } else if conclusion <= band * tol {
            ImplicationStatus::Holds
        } else {
            ImplicationStatus::Violated
        };
        Self {
            label: label.to_string(),
            hypothesis,
            conclusion,
            status,
            intermediate,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IntegrabilityReport {
    pub tolerance: f64,
    pub implications: Vec<ImplicationRecord>,
}

struct IntegrabilityRaw {
    nijenhuis: f64,
    cov_j: f64,
    theta1_plus_2omega1: f64,
    theta23: f64,
    w3: f64,
}

fn integrability_raw(point: &QkPoint, tol: f64) -> Result<IntegrabilityRaw> {
    let omega = point.extract()?;
    if omega.residual > tol {
        return Err(Error::NotQuaternionicKahler { residual: omega.residual, tol });
    }
    let f = point.structural_f()?;
    let theta = per_alpha(|a| lie_theta_from(&f[a.index()], &point.g))?;
    let mut nij = 0.0_f64;
    for alpha in Alpha::ALL {
        let (n, ns) = point.nijenhuis(alpha)?;
        nij = nij.max(n.max_abs()).max(ns.max_abs());
    }
    let mut w3 = 0.0_f64;
    for alpha in [Alpha::Two, Alpha::Three] {
        let a = alpha.index();
        let res = norden_residuals(&f[a], &theta[a], &point.g, point.h.get(alpha))?;
        w3 = w3.max(res[W3]);
    }
    Ok(IntegrabilityRaw {
        nijenhuis: nij,
        cov_j: point.cov_j.iter().fold(0.0_f64, |m, t| m.max(t.max_abs())),
        theta1_plus_2omega1: (&theta[0] + &omega.omega[0] * 2.0).amax(),
        theta23: theta[1].amax().max(theta[2].amax()),
        w3,
    })
}

fn integrability_from(raw: &[IntegrabilityRaw], tol: f64, band: f64) -> IntegrabilityReport {
    let fold = |f: &dyn Fn(&IntegrabilityRaw) -> f64| raw.iter().fold(0.0_f64, |a, r| a.max(f(r)));
    let (nij, cov, t1, t23, w3) = (
        fold(&|r| r.nijenhuis),
        fold(&|r| r.cov_j),
        fold(&|r| r.theta1_plus_2omega1),
        fold(&|r| r.theta23),
        fold(&|r| r.w3),
    );
    let mut inter = BTreeMap::new();
    inter.insert("theta1+2omega1".to_string(), t1);
    inter.insert("theta2,theta3".to_string(), t23);
    IntegrabilityReport {
        tolerance: tol,
        implications: vec![
            ImplicationRecord::new("Prop-int", nij, cov, tol, band, inter),
            ImplicationRecord::new("Prop-23", t23, cov, tol, band, BTreeMap::new()),
            ImplicationRecord::new("Cor-W3", w3, cov, tol, band, BTreeMap::new()),
        ],
    }
}

/// The three integrability implications at a single tangent space:
/// `N_α = N*_α = 0 ⇒ ∇J = 0`, `θ₂ = θ₃ = 0 ⇒ ∇J = 0`, `W₃(J₂) ∧ W₃(J₃) ⇒ ∇J = 0`.
///
/// The conclusions are not consequences of pointwise algebra alone; on pointwise
/// data a violated record is a statement about that data, not a contradiction.
pub fn integrability_at(point: &QkPoint, tol: f64, band: f64) -> Result<IntegrabilityReport> {
    Ok(integrability_from(&[integrability_raw(point, tol)?], tol, band))
}

pub fn integrability_propositions(m: &ChartManifold, points: &[Vec<f64>], tol: f64, band: f64) -> Result<IntegrabilityReport> {
    if points.is_empty() {
        return Err(Error::Other("no sample points".into()));
    }
    let raw: Vec<IntegrabilityRaw> = points
        .par_iter()
        .map(|p| {
            let point = QkPoint::new(m.metric_at(p)?, m.triple_at(p)?, m.cov_deriv_triple(p)?)?;
            integrability_raw(&point, tol)
        })
        .collect::<Result<_>>()?;
    Ok(integrability_from(&raw, tol, band))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gallery::{flat_metric, flat_triple};
    use crate::structures::{sample_constrained_curvature, CurvatureConstraints};

    fn random_omegas(d: usize, seed: u64) -> [DVector<f64>; 3] {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        [0, 1, 2].map(|_| DVector::from_fn(d, |_, _| -> f64 { StandardNormal.sample(&mut rng) }))
    }

    #[test]
    fn zero_forms_give_zero_derivatives_and_exact_fit() {
        let h = flat_triple(1);
        let g = flat_metric(1);
        let z = [DVector::zeros(4), DVector::zeros(4), DVector::zeros(4)];
        let cov = build_qk_covj(&h, &z).unwrap();
        assert!(cov.iter().all(|t| t.max_abs() == 0.0));
        let fit = extract_omegas(&cov, &h, &g).unwrap();
        assert_eq!(fit.residual, 0.0);
        assert!(fit.omega.iter().all(|w| w.amax() == 0.0));
    }

    #[test]
    fn round_trip_recovers_the_forms() {
        for n in [1, 2] {
            let h = flat_triple(n);
            let g = flat_metric(n);
            let w = random_omegas(4 * n, 3 + n as u64);
            let fit = extract_omegas(&build_qk_covj(&h, &w).unwrap(), &h, &g).unwrap();
            assert!(fit.residual < 1e-12);
            assert!(fit.lsq_discrepancy < 1e-12);
            for a in 0..3 {
                assert!((&fit.omega[a] - &w[a]).amax() < 1e-12);
                // g(Ω, x) = ω(x)
                assert!((g.g() * &fit.big_omega[a] - &w[a]).amax() < 1e-12);
            }
        }
    }

    #[test]
    fn eta_matches_index_loop() {
        let d = 8;
        let w = random_omegas(d, 11);
        let dw = [0, 1, 2].map(|k| {
            let m = DMatrix::from_fn(d, d, |i, j| ((i * 7 + j * 3 + k) % 5) as f64 - 2.0);
            &m - m.transpose()
        });
        let eta = eta_forms(&w, &dw).unwrap();
        // (α, β, γ) cyclic: η_β = dω_β + ω_γ ⊗ ω_α − ω_α ⊗ ω_γ
        for (a, b, c) in [(0, 1, 2), (1, 2, 0), (2, 0, 1)] {
            for x in 0..d {
                for y in 0..d {
                    let expect = dw[b][(x, y)] + w[c][x] * w[a][y] - w[a][x] * w[c][y];
                    assert!((eta[b][(x, y)] - expect).abs() < 1e-14);
                }
            }
        }
    }

    #[test]
    fn square_norm_formula_matches_direct_contraction() {
        for n in [1, 2] {
            let h = flat_triple(n);
            let g = flat_metric(n);
            let w = random_omegas(4 * n, 42);
            let cov = build_qk_covj(&h, &w).unwrap();
            let fit = extract_omegas(&cov, &h, &g).unwrap();
            let iso = isotropy_check(&fit, &g, &cov, 1e-9).unwrap();
            assert!(iso.formula_residual < 1e-12, "{}", iso.formula_residual);
            assert!(iso.consistent);
        }
    }

    #[test]
    fn closed_form_nijenhuis_matches_covariant_formula() {
        let n = 2;
        let h = flat_triple(n);
        let w = random_omegas(4 * n, 5);
        let cov = build_qk_covj(&h, &w).unwrap();
        for alpha in Alpha::ALL {
            let (a, astar) = nijenhuis_from_covj(&cov[alpha.index()], h.get(alpha)).unwrap();
            let (b, bstar) = nijenhuis_closed_form(&w, &h, alpha).unwrap();
            assert!(a.max_abs_diff(&b).unwrap() < 1e-12);
            assert!(astar.max_abs_diff(&bstar).unwrap() < 1e-12);
        }
    }

    #[test]
    fn usl_completion_kills_nijenhuis_and_fixes_theta() {
        let h = flat_triple(1);
        let g = flat_metric(1);
        let w1 = random_omegas(4, 9)[0].clone();
        let w = usl_completion(&w1, &h);
        let rel = hypercomplex_omega_relations(&w, &h, 1e-12).unwrap();
        assert!(rel.pass);
        assert!(rel.nijenhuis.iter().all(|v| *v < 1e-12));
        let theta = qk_theta(&w, &h).unwrap();
        assert!((&theta[0] + &w[0] * 2.0).amax() < 1e-12);
        assert!(theta[1].amax() < 1e-12 && theta[2].amax() < 1e-12);
        let point = QkPoint::new(g, h.clone(), build_qk_covj(&h, &w).unwrap()).unwrap();
        let direct = point.lie_theta().unwrap();
        for a in 0..3 {
            assert!((&direct[a] - &theta[a]).amax() < 1e-12);
        }
    }

    #[test]
    fn theta_and_f_closed_forms_hold_for_generic_forms() {
        let n = 2;
        let h = flat_triple(n);
        let g = flat_metric(n);
        let w = random_omegas(4 * n, 17);
        let point = QkPoint::new(g.clone(), h.clone(), build_qk_covj(&h, &w).unwrap()).unwrap();
        let rel = hypercomplex_omega_relations(&w, &h, 1e-9).unwrap();
        assert!(!rel.pass && rel.nijenhuis.iter().all(|v| *v > 1e-3));
        let theta = qk_theta(&w, &h).unwrap();
        let f = qk_structural_f(&w, &g, &h).unwrap();
        let f_direct = point.structural_f().unwrap();
        let theta_direct = point.lie_theta().unwrap();
        for a in 0..3 {
            assert!((&theta[a] - &theta_direct[a]).amax() < 1e-12);
            assert!(f[a].max_abs_diff(&f_direct[a]).unwrap() < 1e-12);
        }
    }

    #[test]
    fn einstein_edge_cases() {
        let g = flat_metric(2);
        let zero = DMatrix::zeros(8, 8);
        let v = einstein_check(&zero, &g, 0.0, 2, 1e-9);
        assert!(v.pass && v.lambda == 0.0 && v.theorem_applies);
        // ρ = g + s e₀ ⊗ e₀ with g₀₀ = 1: τ = 4n + s, defect s(1 − 1/4n) over max|ρ| = 1 + s.
        let s = 0.5;
        let mut rho = g.g().clone();
        rho[(0, 0)] += s;
        let tau = (g.g_inv() * &rho).trace();
        let v = einstein_check(&rho, &g, tau, 2, 1e-9);
        assert!(!v.pass);
        assert!((v.residual - s * (1.0 - 1.0 / 8.0) / (1.0 + s)).abs() < 1e-14);
        let v4 = einstein_check(&DMatrix::zeros(4, 4), &flat_metric(1), 0.0, 1, 1e-9);
        assert!(!v4.theorem_applies && v4.note.is_some());
    }

    #[test]
    fn sampler_curvature_satisfies_the_identities_in_dim_8() {
        let g = flat_metric(2);
        let h = flat_triple(2);
        for seed in 0..5 {
            let s = sample_constrained_curvature(&g, &h, CurvatureConstraints::default(), seed).unwrap();
            assert!(!s.empty);
            let r = s.curvature.tensor();
            let rho = crate::chart::ricci_from(r, &g, crate::chart::RicciTrace::FirstLast).unwrap();
            let eta = [s.eta1.clone(), DMatrix::zeros(8, 8), DMatrix::zeros(8, 8)];
            let ids = curvature_identities(r, &rho, &eta, &g, &h, seed).unwrap();
            for (k, v) in &ids {
                assert!(*v < 1e-8, "{k}: {v}");
            }
        }
    }

    #[test]
    fn equivalence_bands() {
        let e = Equivalence::new("x", "a", 0.0, "b", 0.0, 1e-6, 100.0, true);
        assert!(e.holds());
        let e = Equivalence::new("x", "a", 0.0, "b", 1.0, 1e-6, 100.0, true);
        assert!(!e.forward && e.backward && !e.holds());
        let e = Equivalence::new("x", "a", 1.0, "b", 1.0, 1e-6, 100.0, true);
        assert!(e.holds());
        let e = Equivalence::new("x", "a", 5e-5, "b", 1e-7, 1e-6, 100.0, true);
        assert!(e.holds());
    }

    #[test]
    fn implied_kahler_residual_is_product_of_maxima() {
        let g = flat_metric(1);
        let h = flat_triple(1);
        let g1 = associated_matrix(&g, &h, Alpha::One);
        let mut eta = DMatrix::zeros(4, 4);
        eta[(1, 0)] = 0.01;
        eta[(0, 1)] = -0.01;
        let direct = product(&eta, &g1).max_abs();
        assert!((implied_kahler_residual(&eta, &g1) - direct).abs() < 1e-16);
    }
}
