//! Deterministic fixtures: the flat model, the rotating-frame `W₁ ⊕ W₃` chart,
//! pointwise quaternionic Kähler data and a conformally warped control.
//!
//! Each fixture carries the verdicts and bounds it is expected to produce;
//! [`Fixture::check`] re-derives them from the analyzers.

use std::collections::BTreeMap;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use crate::chart::{ChartManifold, Domain, MetricField, ScalarField, TripleField};
use crate::classifier::{classify_chart, W0, W1_W3, W3};
use crate::error::{Error, Result};
use crate::qk::{build_qk_covj, extract_omegas, hypercomplex_omega_relations, isotropy_check, usl_completion, QkPoint};
use crate::structures::{check_nh_compat, Alpha, HTriple, COMPAT_TOL};
use crate::tensor::{DenseTensor, MetricBundle, Variance};

/// Left multiplication by `i` on the basis `(1, i, j, k)` of the quaternions.
pub fn quaternion_i() -> DMatrix<f64> {
    DMatrix::from_row_slice(4, 4, &[0., -1., 0., 0., 1., 0., 0., 0., 0., 0., 0., -1., 0., 0., 1., 0.])
}

/// Left multiplication by `j`.
pub fn quaternion_j() -> DMatrix<f64> {
    DMatrix::from_row_slice(4, 4, &[0., 0., -1., 0., 0., 0., 0., 1., 1., 0., 0., 0., 0., -1., 0., 0.])
}

fn block_diag(n: usize, m: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(4 * n, 4 * n);
    for b in 0..n {
        out.view_mut((4 * b, 4 * b), (4, 4)).copy_from(m);
    }
    out
}

/// `(J₁, J₂, J₃) = (L_i, L_j, L_i L_j)` repeated on `n` diagonal blocks.
pub fn flat_triple(n: usize) -> HTriple {
    HTriple::from_pair(block_diag(n, &quaternion_i()), block_diag(n, &quaternion_j()))
        .expect("n >= 1")
}

/// Diagonal `(1, 1, −1, −1)` on each block. Among diagonal `±1` metrics the
/// compatible ones are exactly `±(1, 1, −1, −1)`.
pub fn flat_metric_matrix(n: usize) -> DMatrix<f64> {
    block_diag(n, &DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 1.0, -1.0, -1.0])))
}

pub fn flat_metric(n: usize) -> MetricBundle {
    MetricBundle::new(flat_metric_matrix(n)).expect("n >= 1")
}

pub const FIXTURE_POINTS: usize = 4;
pub const CHART_TOL: f64 = 1e-6;
pub const POINTWISE_TOL: f64 = 1e-10;
pub const DEFAULT_SEED: u64 = 42;

pub const KEY_NH: &str = "nh-compatible";
pub const KEY_HK: &str = "hyper-Kahler";
pub const KEY_QK: &str = "quaternionic-Kahler";
pub const KEY_R: &str = "max|R|";
pub const KEY_EQ_QK: &str = "Eq-qK";
pub const KEY_ROUND_TRIP: &str = "omega-round-trip";
pub const KEY_NJ_QK: &str = "nJ-qK";
pub const KEY_ISOTROPIC: &str = "isotropic";
pub const KEY_NN: &str = "NN*";
pub const KEY_THETA_USL: &str = "theta-usl";

/// `"W0(J1)"` and the like.
pub fn class_key(class: &str, alpha: Alpha) -> String {
    format!("{class}(J{})", alpha.number())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum Expectation {
    Verdict(bool),
    AtMost(f64),
    AtLeast(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum Observation {
    Verdict(bool),
    Value(f64),
}

impl Expectation {
    pub fn matches(&self, obs: &Observation) -> bool {
        match (self, obs) {
            (Expectation::Verdict(a), Observation::Verdict(b)) => a == b,
            (Expectation::AtMost(a), Observation::Value(v)) => v <= a,
            (Expectation::AtLeast(a), Observation::Value(v)) => v >= a,
            _ => false,
        }
    }
}

/// Pointwise data with the 1-forms it was built from.
#[derive(Debug, Clone, PartialEq)]
pub struct PointwiseQk {
    pub point: QkPoint,
    pub omega: [DVector<f64>; 3],
}

#[derive(Debug, Clone)]
pub enum FixtureData {
    Chart(ChartManifold),
    Pointwise(PointwiseQk),
}

#[derive(Debug, Clone)]
pub struct Fixture {
    pub name: String,
    pub data: FixtureData,
    pub expected: BTreeMap<String, Expectation>,
    pub seed: Option<u64>,
    pub tolerance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FixtureOutcome {
    pub key: String,
    pub expected: Expectation,
    pub observed: Observation,
    pub ok: bool,
}

impl Fixture {
    pub fn chart(&self) -> Option<&ChartManifold> {
        match &self.data {
            FixtureData::Chart(m) => Some(m),
            FixtureData::Pointwise(_) => None,
        }
    }

    pub fn pointwise(&self) -> Option<&PointwiseQk> {
        match &self.data {
            FixtureData::Pointwise(p) => Some(p),
            FixtureData::Chart(_) => None,
        }
    }

    pub fn dim(&self) -> usize {
        match &self.data {
            FixtureData::Chart(m) => m.dim(),
            FixtureData::Pointwise(p) => p.point.dim(),
        }
    }

    /// Seeded interior sample points of a chart fixture.
    pub fn sample_points(&self, count: usize) -> Result<Vec<Vec<f64>>> {
        match &self.data {
            FixtureData::Chart(m) => m.random_points(count, self.seed.unwrap_or(0)),
            FixtureData::Pointwise(_) => Ok(Vec::new()),
        }
    }

    /// Observations for every key the fixture knows about.
    pub fn observe(&self) -> Result<BTreeMap<String, Observation>> {
        match &self.data {
            FixtureData::Chart(m) => observe_chart(m, &self.sample_points(FIXTURE_POINTS)?, self.tolerance),
            FixtureData::Pointwise(p) => observe_pointwise(p, self.tolerance),
        }
    }

    pub fn check(&self) -> Result<Vec<FixtureOutcome>> {
        let obs = self.observe()?;
        self.expected
            .iter()
            .map(|(k, e)| {
                let o = obs
                    .get(k)
                    .copied()
                    .ok_or_else(|| Error::Other(format!("fixture {} has no observation {k}", self.name)))?;
                Ok(FixtureOutcome {
                    key: k.clone(),
                    expected: *e,
                    observed: o,
                    ok: e.matches(&o),
                })
            })
            .collect()
    }
}

fn observe_chart(m: &ChartManifold, points: &[Vec<f64>], tol: f64) -> Result<BTreeMap<String, Observation>> {
    let mut out = BTreeMap::new();
    let nh = points
        .iter()
        .map(|p| check_nh_compat(&m.metric_at(p)?, &m.triple_at(p)?).map(|c| c.max() <= COMPAT_TOL && c.neutral()))
        .collect::<Result<Vec<bool>>>()?
        .into_iter()
        .all(|b| b);
    out.insert(KEY_NH.to_string(), Observation::Verdict(nh));
    let cls = classify_chart(m, points, tol)?;
    for alpha in Alpha::ALL {
        for class in [W0, W1_W3, W3] {
            let r = &cls.reports[alpha.index()];
            if r.residual(class).is_some() {
                out.insert(class_key(class, alpha), Observation::Verdict(r.passes(class)));
            }
        }
    }
    out.insert(KEY_HK.to_string(), Observation::Verdict(cls.hyper_kahler.pass));
    let mut r_max = 0.0_f64;
    let mut qk = 0.0_f64;
    for p in points {
        r_max = r_max.max(m.curvature(p)?.r4.max_abs());
        qk = qk.max(extract_omegas(&m.cov_deriv_triple(p)?, &m.triple_at(p)?, &m.metric_at(p)?)?.residual);
    }
    out.insert(KEY_R.to_string(), Observation::Value(r_max));
    out.insert(KEY_QK.to_string(), Observation::Verdict(qk <= tol));
    out.insert(KEY_EQ_QK.to_string(), Observation::Value(qk));
    Ok(out)
}

fn observe_pointwise(p: &PointwiseQk, tol: f64) -> Result<BTreeMap<String, Observation>> {
    let q = &p.point;
    let mut out = BTreeMap::new();
    let nh = check_nh_compat(&q.g, &q.h)?;
    out.insert(KEY_NH.to_string(), Observation::Verdict(nh.max() <= COMPAT_TOL && nh.neutral()));
    let fit = q.extract()?;
    out.insert(KEY_EQ_QK.to_string(), Observation::Value(fit.residual));
    out.insert(KEY_QK.to_string(), Observation::Verdict(fit.residual <= tol));
    let rt = (0..3).fold(0.0_f64, |m, a| m.max((&fit.omega[a] - &p.omega[a]).amax()));
    out.insert(KEY_ROUND_TRIP.to_string(), Observation::Value(rt));
    let iso = isotropy_check(&fit, &q.g, &q.cov_j, tol)?;
    out.insert(KEY_NJ_QK.to_string(), Observation::Value(iso.formula_residual));
    out.insert(KEY_ISOTROPIC.to_string(), Observation::Verdict(iso.norms_vanish));
    out.insert(KEY_HK.to_string(), Observation::Verdict(iso.hyper_kahler));
    let rel = hypercomplex_omega_relations(&p.omega, &q.h, tol)?;
    out.insert(KEY_NN.to_string(), Observation::Value(rel.nijenhuis.iter().fold(0.0_f64, |a, v| a.max(*v))));
    let theta = q.lie_theta()?;
    let usl = (&theta[0] + &p.omega[0] * 2.0).amax().max(theta[1].amax()).max(theta[2].amax());
    out.insert(KEY_THETA_USL.to_string(), Observation::Value(usl));
    Ok(out)
}

fn expect(pairs: &[(&str, Expectation)]) -> BTreeMap<String, Expectation> {
    pairs.iter().map(|(k, e)| (k.to_string(), *e)).collect()
}

fn check_n(n: usize) -> Result<()> {
    if n == 0 {
        return Err(Error::Dimension("n must be at least 1".into()));
    }
    Ok(())
}

fn constant_chart(n: usize) -> Result<ChartManifold> {
    let d = 4 * n;
    let g = flat_metric_matrix(n);
    let h = flat_triple(n);
    let metric: MetricField = Arc::new(move |_| Ok(g.clone()));
    let triple: TripleField = Arc::new(move |_| Ok(h.clone()));
    ChartManifold::new(d, Domain::cube(d, -1.0, 1.0)?, metric, triple)
}

/// `"FLAT{4n}"`: constant structures and metric on `[−1, 1]^{4n}`.
pub fn flat_standard(n: usize) -> Result<Fixture> {
    check_n(n)?;
    let m = constant_chart(n)?;
    let mut expected = expect(&[
        (KEY_NH, Expectation::Verdict(true)),
        (KEY_HK, Expectation::Verdict(true)),
        (KEY_QK, Expectation::Verdict(true)),
        (KEY_R, Expectation::AtMost(1e-10)),
    ]);
    for alpha in Alpha::ALL {
        expected.insert(class_key(W0, alpha), Expectation::Verdict(true));
    }
    Ok(Fixture {
        name: format!("FLAT{}", 4 * n),
        data: FixtureData::Chart(m),
        expected,
        seed: Some(0),
        tolerance: CHART_TOL,
    })
}

/// `φ = 0.5 sin(x₁) + 0.3 x₂ x₃`.
pub fn default_phi() -> ScalarField {
    Arc::new(|p: &[f64]| Ok(0.5 * p[0].sin() + 0.3 * p[1] * p[2]))
}

fn check_evaluable(f: &ScalarField, domain: &Domain, what: &str) -> Result<()> {
    let d = domain.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut probes = vec![domain.center(), domain.lo().to_vec(), domain.hi().to_vec()];
    probes.extend((0..64).map(|_| (0..d).map(|a| rng.random_range(domain.lo()[a]..=domain.hi()[a])).collect()));
    for p in probes {
        let v = f(&p).map_err(|e| Error::Field(format!("{what} cannot be evaluated at {p:?}: {e}")))?;
        if !v.is_finite() {
            return Err(Error::Field(format!("{what} is not finite at {p:?}")));
        }
    }
    Ok(())
}

/// `"SYNTH-QK-CHART"`: flat metric, constant `J₁`, and `J₂, J₃` rotated through
/// `φ(p)` in their own plane, so `∇J₂ = dφ ⊗ J₃`, `∇J₃ = −dφ ⊗ J₂`.
///
/// The metric is constant and `ω₁ = dφ` is closed, so the chart is flat for every `φ`.
pub fn synth_qk_chart(n: usize, phi: ScalarField) -> Result<Fixture> {
    check_n(n)?;
    let d = 4 * n;
    let domain = Domain::cube(d, -1.0, 1.0)?;
    check_evaluable(&phi, &domain, "phi")?;
    let g = flat_metric_matrix(n);
    let h0 = flat_triple(n);
    let metric: MetricField = Arc::new(move |_| Ok(g.clone()));
    let triple: TripleField = Arc::new(move |p: &[f64]| {
        let t = phi(p)?;
        if !t.is_finite() {
            return Err(Error::Field(format!("phi is not finite at {p:?}")));
        }
        let (c, s) = (t.cos(), t.sin());
        let j2 = h0.get(Alpha::Two) * c + h0.get(Alpha::Three) * s;
        let j3 = h0.get(Alpha::Three) * c - h0.get(Alpha::Two) * s;
        HTriple::new(h0.get(Alpha::One).clone(), j2, j3)
    });
    let m = ChartManifold::new(d, domain, metric, triple)?;
    let mut expected = expect(&[
        (KEY_NH, Expectation::Verdict(true)),
        (KEY_QK, Expectation::Verdict(true)),
        (KEY_R, Expectation::AtMost(1e-5)),
    ]);
    expected.insert(class_key(W0, Alpha::One), Expectation::Verdict(true));
    // The rotating pattern is not in W1+W3 for J2, J3 unless dφ = 0.
    for alpha in [Alpha::Two, Alpha::Three] {
        expected.insert(class_key(W3, alpha), Expectation::Verdict(false));
        expected.insert(class_key(W1_W3, alpha), Expectation::Verdict(false));
    }
    Ok(Fixture {
        name: "SYNTH-QK-CHART".into(),
        data: FixtureData::Chart(m),
        expected,
        seed: Some(0),
        tolerance: CHART_TOL,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub enum OmegaSource {
    Explicit([DVector<f64>; 3]),
    Seed(u64),
}

fn gaussian(d: usize, rng: &mut ChaCha8Rng) -> DVector<f64> {
    DVector::from_fn(d, |_, _| -> f64 { StandardNormal.sample(rng) })
}

fn pointwise(name: &str, n: usize, omega: [DVector<f64>; 3], seed: Option<u64>, expected: BTreeMap<String, Expectation>) -> Result<Fixture> {
    let g = flat_metric(n);
    let h = flat_triple(n);
    let cov_j = build_qk_covj(&h, &omega)?;
    Ok(Fixture {
        name: name.into(),
        data: FixtureData::Pointwise(PointwiseQk {
            point: QkPoint::new(g, h, cov_j)?,
            omega,
        }),
        expected,
        seed,
        tolerance: POINTWISE_TOL,
    })
}

/// `"SYNTH-QK"`: `∇J_α = ω_γ ⊗ J_β − ω_β ⊗ J_γ` at one tangent space of the flat model.
pub fn synth_qk_pointwise(n: usize, source: OmegaSource) -> Result<Fixture> {
    check_n(n)?;
    let d = 4 * n;
    let (omega, seed) = match source {
        OmegaSource::Explicit(w) => (w, None),
        OmegaSource::Seed(s) => {
            let mut rng = ChaCha8Rng::seed_from_u64(s);
            ([0, 1, 2].map(|_| gaussian(d, &mut rng)), Some(s))
        }
    };
    let zero = omega.iter().all(|w| w.iter().all(|v| *v == 0.0));
    let expected = expect(&[
        (KEY_NH, Expectation::Verdict(true)),
        (KEY_QK, Expectation::Verdict(true)),
        (KEY_EQ_QK, Expectation::AtMost(1e-10)),
        (KEY_ROUND_TRIP, Expectation::AtMost(1e-10)),
        (KEY_NJ_QK, Expectation::AtMost(1e-12)),
        (KEY_HK, Expectation::Verdict(zero)),
    ]);
    pointwise("SYNTH-QK", n, omega, seed, expected)
}

/// `"SYNTH-QK-USL"`: random `ω₁` completed by `ω₃ = ω₁∘J₂`, `ω₂ = −ω₁∘J₃`.
pub fn synth_qk_usl(n: usize, seed: u64) -> Result<Fixture> {
    check_n(n)?;
    let h = flat_triple(n);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let omega = usl_completion(&gaussian(4 * n, &mut rng), &h);
    let expected = expect(&[
        (KEY_QK, Expectation::Verdict(true)),
        (KEY_NN, Expectation::AtMost(1e-10)),
        (KEY_THETA_USL, Expectation::AtMost(1e-9)),
        (KEY_HK, Expectation::Verdict(false)),
    ]);
    pointwise("SYNTH-QK-USL", n, omega, Some(seed), expected)
}

/// Random covector whose `g`-dual is null for the flat model metric.
pub fn null_covector(n: usize, rng: &mut ChaCha8Rng) -> DVector<f64> {
    let mut v = gaussian(4 * n, rng);
    let sel = |k: usize| k % 4 < 2;
    let plus: f64 = (0..4 * n).filter(|k| sel(*k)).map(|k| v[k] * v[k]).sum();
    let minus: f64 = (0..4 * n).filter(|k| !sel(*k)).map(|k| v[k] * v[k]).sum();
    let r = (plus / minus).sqrt();
    for k in (0..4 * n).filter(|k| !sel(*k)) {
        v[k] *= r;
    }
    v
}

/// `"SYNTH-QK-NULL"`: all three `Ω_α` null, so every `‖∇J_α‖²` vanishes while `∇J ≠ 0`.
pub fn synth_qk_null(n: usize, seed: u64) -> Result<Fixture> {
    check_n(n)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let omega = [0, 1, 2].map(|_| null_covector(n, &mut rng));
    let expected = expect(&[
        (KEY_QK, Expectation::Verdict(true)),
        (KEY_ISOTROPIC, Expectation::Verdict(true)),
        (KEY_HK, Expectation::Verdict(false)),
    ]);
    pointwise("SYNTH-QK-NULL", n, omega, Some(seed), expected)
}

/// Re-expresses pointwise data in the basis `e'_i = P e_i` for a random
/// well-conditioned `P`: `g' = PᵀgP`, `J' = P⁻¹JP`, `ω' = Pᵀω`.
pub fn in_random_frame(data: &PointwiseQk, seed: u64) -> Result<PointwiseQk> {
    let d = data.point.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let p = DMatrix::identity(d, d) + DMatrix::from_fn(d, d, |_, _| 0.3 * rng.random_range(-1.0..1.0));
    let pinv = p.clone().try_inverse().ok_or_else(|| Error::Other("singular frame".into()))?;
    let g = MetricBundle::new(p.transpose() * data.point.g.g() * &p)?;
    let j = data.point.h.all();
    let h = HTriple::new(&pinv * &j[0] * &p, &pinv * &j[1] * &p, &pinv * &j[2] * &p)?;
    let omega = data.omega.clone().map(|w| p.transpose() * w);
    let cov_j = build_qk_covj(&h, &omega)?;
    Ok(PointwiseQk {
        point: QkPoint::new(g, h, cov_j)?,
        omega,
    })
}

/// Conformal factor `w(x₁)` with its first two derivatives.
#[derive(Clone)]
pub struct Warp {
    pub w: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
    pub dw: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
    pub d2w: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
}

impl std::fmt::Debug for Warp {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Warp").finish_non_exhaustive()
    }
}

impl Warp {
    /// `w = e^{2c x₁}`, i.e. `g = diag(e^{2f}) g₀` with `f = c x₁`.
    pub fn exponential(c: f64) -> Self {
        Self {
            w: Arc::new(move |x| (2.0 * c * x).exp()),
            dw: Arc::new(move |x| 2.0 * c * (2.0 * c * x).exp()),
            d2w: Arc::new(move |x| 4.0 * c * c * (2.0 * c * x).exp()),
        }
    }

    /// `f = ½ ln w` and its first two derivatives at `x`.
    fn log_half(&self, x: f64) -> (f64, f64, f64) {
        let (w, w1, w2) = ((self.w)(x), (self.dw)(x), (self.d2w)(x));
        (0.5 * w.ln(), w1 / (2.0 * w), (w2 * w - w1 * w1) / (2.0 * w * w))
    }
}

/// `"WARP{4n}"`: `g = w(x₁) g₀` with the flat model `(g₀, H₀)`. The structures
/// stay compatible but are no longer parallel.
pub fn warped_control(n: usize, warp: Warp) -> Result<Fixture> {
    check_n(n)?;
    let d = 4 * n;
    let domain = Domain::cube(d, -1.0, 1.0)?;
    let (lo, hi) = (domain.lo()[0], domain.hi()[0]);
    for k in 0..=1000 {
        let x = lo + (hi - lo) * k as f64 / 1000.0;
        let v = (warp.w)(x);
        if !(v > 0.0 && v.is_finite()) {
            return Err(Error::InvalidWarp(format!("warp is {v} at x1 = {x}")));
        }
    }
    let g0 = flat_metric_matrix(n);
    let h = flat_triple(n);
    let w = warp.w.clone();
    let metric: MetricField = Arc::new(move |p: &[f64]| {
        let v = w(p[0]);
        if !(v > 0.0 && v.is_finite()) {
            return Err(Error::InvalidWarp(format!("warp is {v} at x1 = {}", p[0])));
        }
        Ok(&g0 * v)
    });
    let triple: TripleField = Arc::new(move |_| Ok(h.clone()));
    let m = ChartManifold::new(d, domain, metric, triple)?;
    let expected = expect(&[
        (KEY_NH, Expectation::Verdict(true)),
        (KEY_HK, Expectation::Verdict(false)),
        (&class_key(W0, Alpha::One), Expectation::Verdict(false)),
        (KEY_R, Expectation::AtLeast(1e-3)),
    ]);
    Ok(Fixture {
        name: format!("WARP{d}"),
        data: FixtureData::Chart(m),
        expected,
        seed: Some(0),
        tolerance: CHART_TOL,
    })
}

/// Closed-form `Γ^k_{ij} = δ^k_i f_j + δ^k_j f_i − g₀_{ij} g₀^{kl} f_l`, stored `(k, i, j)`.
pub fn warp_christoffel(n: usize, warp: &Warp, p: &[f64]) -> Result<DenseTensor> {
    let g0 = flat_metric(n);
    let (_, f1, _) = warp.log_half(p[0]);
    let df = |i: usize| if i == 0 { f1 } else { 0.0 };
    let (g, gi) = (g0.g(), g0.g_inv());
    DenseTensor::from_fn(4 * n, &[Variance::Contra, Variance::Co, Variance::Co], |idx| {
        let (k, i, j) = (idx[0], idx[1], idx[2]);
        let mut v = -g[(i, j)] * gi[(k, 0)] * f1;
        if k == i {
            v += df(j);
        }
        if k == j {
            v += df(i);
        }
        v
    })
}

/// Closed-form `R = −w (T ⊙ g₀)`, `T_{ij} = f_{ij} − f_i f_j + ½ |df|²_{g₀} g₀_{ij}`,
/// with `(h ⊙ k)(x,y,z,w) = h(x,w)k(y,z) + h(y,z)k(x,w) − h(x,z)k(y,w) − h(y,w)k(x,z)`.
pub fn warp_riemann(n: usize, warp: &Warp, p: &[f64]) -> Result<DenseTensor> {
    let g0 = flat_metric(n);
    let (_, f1, f2) = warp.log_half(p[0]);
    let w = (warp.w)(p[0]);
    let g = g0.g();
    let grad2 = g0.g_inv()[(0, 0)] * f1 * f1;
    let t = DMatrix::from_fn(4 * n, 4 * n, |i, j| {
        let fij = if i == 0 && j == 0 { f2 - f1 * f1 } else { 0.0 };
        fij + 0.5 * grad2 * g[(i, j)]
    });
    DenseTensor::from_fn(4 * n, &[Variance::Co; 4], |idx| {
        let (x, y, z, v) = (idx[0], idx[1], idx[2], idx[3]);
        let kn = t[(x, v)] * g[(y, z)] + t[(y, z)] * g[(x, v)] - t[(x, z)] * g[(y, v)] - t[(y, v)] * g[(x, z)];
        -w * kn
    })
}

/// `τ = −w⁻¹ [2(m−1) f'' + (m−2)(m−1) g₀^{11} f'²]` for `m = 4n`.
pub fn warp_scalar(n: usize, warp: &Warp, p: &[f64]) -> f64 {
    let m = (4 * n) as f64;
    let g00 = flat_metric_matrix(n)[(0, 0)];
    let (_, f1, f2) = warp.log_half(p[0]);
    -((2.0 * (m - 1.0) * f2 + (m - 2.0) * (m - 1.0) * f1 * f1) * g00) / (warp.w)(p[0])
}

#[derive(Clone, Default)]
pub struct FixtureParams {
    pub dim: Option<usize>,
    pub seed: Option<u64>,
    pub phi: Option<ScalarField>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CatalogEntry {
    pub name: &'static str,
    pub kind: &'static str,
    pub description: &'static str,
}

pub fn catalog() -> Vec<CatalogEntry> {
    vec![
        CatalogEntry { name: "FLAT4", kind: "chart", description: "constant quaternionic structures with the neutral metric (1,1,-1,-1)" },
        CatalogEntry { name: "FLAT8", kind: "chart", description: "block doubling of FLAT4" },
        CatalogEntry { name: "SYNTH-QK-CHART", kind: "chart", description: "J2, J3 rotated by phi(p), omega1 = dphi, omega2 = omega3 = 0" },
        CatalogEntry { name: "SYNTH-QK", kind: "pointwise", description: "nabla J built from a random omega triple" },
        CatalogEntry { name: "SYNTH-QK-USL", kind: "pointwise", description: "omega triple with omega_a = omega_b o J_c, all Nijenhuis tensors zero" },
        CatalogEntry { name: "SYNTH-QK-NULL", kind: "pointwise", description: "null Omega_a: isotropic, not hyper-Kahler" },
        CatalogEntry { name: "WARP4", kind: "chart", description: "conformal control exp(2 x1) g0 with closed-form curvature" },
        CatalogEntry { name: "WARP8", kind: "chart", description: "WARP4 on dimension 8" },
    ]
}

fn n_from(tail: &str, params: &FixtureParams, name: &str) -> Result<usize> {
    let d = if tail.is_empty() {
        params.dim.unwrap_or(4)
    } else {
        tail.parse::<usize>().map_err(|_| Error::Other(format!("unknown fixture {name}")))?
    };
    if d == 0 || d % 4 != 0 {
        return Err(Error::Dimension(format!("fixture dimension must be a positive multiple of 4, got {d}")));
    }
    Ok(d / 4)
}

/// Looks a fixture up by name. `FLAT` and `WARP` take the dimension from the
/// name (`FLAT8`) or from `params.dim`; the synthetic fixtures from `params.dim`.
pub fn by_name(name: &str, params: &FixtureParams) -> Result<Fixture> {
    let seed = params.seed.unwrap_or(DEFAULT_SEED);
    let upper = name.to_ascii_uppercase();
    if let Some(tail) = upper.strip_prefix("FLAT") {
        return flat_standard(n_from(tail, params, name)?);
    }
    if let Some(tail) = upper.strip_prefix("WARP") {
        return warped_control(n_from(tail, params, name)?, Warp::exponential(1.0));
    }
    let n = n_from("", params, name)?;
    match upper.as_str() {
        "SYNTH-QK-CHART" => synth_qk_chart(n, params.phi.clone().unwrap_or_else(default_phi)),
        "SYNTH-QK" => synth_qk_pointwise(n, OmegaSource::Seed(seed)),
        "SYNTH-QK-USL" => synth_qk_usl(n, seed),
        "SYNTH-QK-NULL" => synth_qk_null(n, seed),
        _ => Err(Error::Other(format!("unknown fixture {name}"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::structures::check_hypercomplex;

    #[test]
    fn diagonal_sign_search_finds_only_the_frozen_pattern() {
        let h = flat_triple(1);
        let mut found = Vec::new();
        for mask in 0..16u32 {
            let s: Vec<f64> = (0..4).map(|k| if mask >> k & 1 == 1 { -1.0 } else { 1.0 }).collect();
            let g = MetricBundle::new(DMatrix::from_diagonal(&DVector::from_vec(s.clone()))).unwrap();
            if check_nh_compat(&g, &h).unwrap().max() == 0.0 {
                found.push(s);
            }
        }
        assert_eq!(found, vec![vec![-1.0, -1.0, 1.0, 1.0], vec![1.0, 1.0, -1.0, -1.0]]);
    }

    #[test]
    fn flat_model_is_compatible_and_neutral() {
        for n in [1, 2, 3] {
            let g = flat_metric(n);
            let h = flat_triple(n);
            assert_eq!(check_hypercomplex(&h).max(), 0.0);
            let c = check_nh_compat(&g, &h).unwrap();
            assert_eq!(c.max(), 0.0);
            assert_eq!(g.signature(), (2 * n, 2 * n));
        }
    }

    #[test]
    fn zero_omega_fixture_has_zero_covariant_derivative() {
        let z = [DVector::zeros(4), DVector::zeros(4), DVector::zeros(4)];
        let fx = synth_qk_pointwise(1, OmegaSource::Explicit(z)).unwrap();
        assert!(fx.pointwise().unwrap().point.cov_j.iter().all(|t| t.max_abs() == 0.0));
        assert!(fx.check().unwrap().iter().all(|o| o.ok));
    }

    #[test]
    fn random_frame_matches_tensor_transformation() {
        let fx = synth_qk_pointwise(1, OmegaSource::Seed(3)).unwrap();
        let base = fx.pointwise().unwrap();
        let moved = in_random_frame(base, 8).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let p = DMatrix::identity(4, 4) + DMatrix::from_fn(4, 4, |_, _| 0.3 * rng.random_range(-1.0..1.0));
        let pinv = p.clone().try_inverse().unwrap();
        let a = base.point.cov_j[1].endomorphisms().unwrap();
        let b = moved.point.cov_j[1].endomorphisms().unwrap();
        for x in 0..4 {
            // ∇_{P e_x} J' = P⁻¹ (Σ_i P_{ix} ∇_{e_i} J) P
            let mut m = DMatrix::zeros(4, 4);
            for (i, ai) in a.iter().enumerate() {
                m += ai * p[(i, x)];
            }
            let expect = &pinv * m * &p;
            assert!((&b[x] - expect).amax() < 1e-12);
        }
        let fit = moved.point.extract().unwrap();
        assert!(fit.residual < 1e-10);
        for k in 0..3 {
            assert!((&fit.omega[k] - &moved.omega[k]).amax() < 1e-10);
        }
    }

    #[test]
    fn null_covectors_are_null() {
        let g = flat_metric(2);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..20 {
            let w = null_covector(2, &mut rng);
            let big = g.raise_covector(&w);
            assert!(w.dot(&big).abs() < 1e-12);
            assert!(w.amax() > 1e-3);
        }
    }

    #[test]
    fn nonpositive_warp_is_rejected() {
        let bad = Warp {
            w: Arc::new(|x| x),
            dw: Arc::new(|_| 1.0),
            d2w: Arc::new(|_| 0.0),
        };
        assert!(matches!(warped_control(1, bad), Err(Error::InvalidWarp(_))));
    }

    #[test]
    fn unevaluable_phi_is_rejected() {
        let phi: ScalarField = Arc::new(|p: &[f64]| Ok((p[0] - 0.5).ln()));
        assert!(matches!(synth_qk_chart(1, phi), Err(Error::Field(_))));
    }

    #[test]
    fn warp_scalar_oracle_agrees_with_closed_form_riemann() {
        let warp = Warp::exponential(0.7);
        let g0 = flat_metric(1);
        let p = [0.3, 0.0, 0.0, 0.0];
        let r = warp_riemann(1, &warp, &p).unwrap();
        let g = MetricBundle::new(g0.g() * (warp.w)(p[0])).unwrap();
        let rho = crate::chart::ricci_from(&r, &g, crate::chart::RicciTrace::FirstLast).unwrap();
        let tau = crate::chart::scalar_from(&rho, &g);
        assert!((tau - warp_scalar(1, &warp, &p)).abs() < 1e-12, "{tau}");
    }

    #[test]
    fn lookup_by_name() {
        for e in catalog() {
            let fx = by_name(e.name, &FixtureParams::default()).unwrap();
            assert_eq!(fx.name, e.name);
        }
        assert_eq!(by_name("flat8", &FixtureParams::default()).unwrap().dim(), 8);
        assert!(by_name("FLAT6", &FixtureParams::default()).is_err());
        assert!(by_name("NOPE", &FixtureParams::default()).is_err());
    }

    #[test]
    fn pointwise_fixtures_meet_their_expectations() {
        for name in ["SYNTH-QK", "SYNTH-QK-USL", "SYNTH-QK-NULL"] {
            for dim in [4, 8] {
                let params = FixtureParams { dim: Some(dim), ..Default::default() };
                let fx = by_name(name, &params).unwrap();
                for o in fx.check().unwrap() {
                    assert!(o.ok, "{name} dim {dim}: {o:?}");
                }
            }
        }
    }
}
