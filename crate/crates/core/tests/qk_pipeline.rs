use std::sync::{Arc, OnceLock};

use nalgebra::{DMatrix, DVector};
use nhk_core::chart::{ricci_from, ChartManifold, MetricField, RicciTrace, TripleField};
use nhk_core::classifier::classify_chart;
use nhk_core::gallery::{by_name, flat_metric, flat_triple, synth_qk_null, synth_qk_usl, FixtureParams};
use nhk_core::qk::{
    build_qk_covj, extract_omegas, integrability_at, integrability_propositions, isotropy_check, verify_qk_identities,
    w1w3_analysis, ImplicationStatus, QkOptions, QkPoint, W1W3Gate, EQ_QK, LEMMA_D_OM, THM_EINSTEIN,
};
use nhk_core::structures::{ConstrainedCurvatureSpace, CurvatureConstraints};
use nhk_core::{Alpha, Error, MetricBundle};
use proptest::prelude::*;

fn chart(name: &str, dim: usize) -> ChartManifold {
    by_name(name, &FixtureParams { dim: Some(dim), ..Default::default() })
        .unwrap()
        .chart()
        .unwrap()
        .clone()
}

fn dim8_space() -> &'static ConstrainedCurvatureSpace {
    static SPACE: OnceLock<ConstrainedCurvatureSpace> = OnceLock::new();
    SPACE.get_or_init(|| {
        ConstrainedCurvatureSpace::new(&flat_metric(2), &flat_triple(2), CurvatureConstraints::default()).unwrap()
    })
}

fn omega_strategy(d: usize) -> impl Strategy<Value = [DVector<f64>; 3]> {
    proptest::collection::vec(-2.0f64..2.0, 3 * d).prop_map(move |v| {
        [0, 1, 2].map(|a| DVector::from_fn(d, |i, _| v[a * d + i]))
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn round_trip_and_square_norms(w4 in omega_strategy(4), w8 in omega_strategy(8)) {
        for (n, w) in [(1, w4), (2, w8)] {
            let (g, h) = (flat_metric(n), flat_triple(n));
            let cov = build_qk_covj(&h, &w).unwrap();
            let fit = extract_omegas(&cov, &h, &g).unwrap();
            prop_assert!(fit.residual <= 1e-10);
            for a in 0..3 {
                prop_assert!((&fit.omega[a] - &w[a]).amax() <= 1e-10);
            }
            let iso = isotropy_check(&fit, &g, &cov, 1e-9).unwrap();
            prop_assert!(iso.formula_residual <= 1e-9);
        }
    }

    #[test]
    fn off_pattern_perturbation_is_measured(seed in 0u64..1000, delta in 1e-6f64..1e-2) {
        let (g, h) = (flat_metric(1), flat_triple(1));
        let w = [0, 1, 2].map(|a| DVector::from_fn(4, |i, _| ((seed as usize + 3 * a + i) % 7) as f64 * 0.3 - 1.0));
        let mut cov = build_qk_covj(&h, &w).unwrap();
        // A perturbation of ∇J₁ along the identity, orthogonal to span{J₂, J₃}.
        let mut mats = cov[0].endomorphisms().unwrap();
        mats[(seed % 4) as usize] += DMatrix::identity(4, 4) * delta;
        cov[0] = nhk_core::DenseTensor::from_endomorphisms(&mats).unwrap();
        let fit = extract_omegas(&cov, &h, &g).unwrap();
        prop_assert!(fit.residual >= delta / 4.0 && fit.residual <= 4.0 * delta, "{} vs {}", fit.residual, delta);
    }

    #[test]
    fn sampled_curvature_is_hybrid_and_einstein(seed in 0u64..10_000) {
        let (g, h) = (flat_metric(2), flat_triple(2));
        let s = dim8_space().sample(seed);
        let r = s.curvature.tensor();
        let rho = ricci_from(r, &g, RicciTrace::FirstLast).unwrap();
        let scale = rho.amax().max(1.0);
        let (j1, j2, j3) = (h.get(Alpha::One), h.get(Alpha::Two), h.get(Alpha::Three));
        prop_assert!((j1.transpose() * &rho * j1 - &rho).amax() / scale <= 1e-8);
        prop_assert!((j2.transpose() * &rho * j2 + &rho).amax() / scale <= 1e-8);
        prop_assert!((j3.transpose() * &rho * j3 + &rho).amax() / scale <= 1e-8);
        let e = &s.eta1;
        let es = e.amax().max(1.0);
        prop_assert!((e + e.transpose()).amax() / es <= 1e-8);
        prop_assert!((e * j1 + j1.transpose() * e).amax() / es <= 1e-8);
        let tau = (g.g_inv() * &rho).trace();
        prop_assert!(nhk_core::qk::einstein_check(&rho, &g, tau, 2, 1e-8).pass);
    }

    #[test]
    fn metric_scaling_leaves_einstein_verdict_unchanged(seed in 0u64..1000, c in 0.1f64..10.0) {
        let g = flat_metric(2);
        let r = dim8_space().sample(seed).curvature.into_tensor();
        let gc = MetricBundle::new(g.g() * c).unwrap();
        let rho = ricci_from(&r, &g, RicciTrace::FirstLast).unwrap();
        let rho_c = ricci_from(&r.scaled(c), &gc, RicciTrace::FirstLast).unwrap();
        let v = nhk_core::qk::einstein_check(&rho, &g, (g.g_inv() * &rho).trace(), 2, 1e-8);
        let vc = nhk_core::qk::einstein_check(&rho_c, &gc, (gc.g_inv() * &rho_c).trace(), 2, 1e-8);
        prop_assert_eq!(v.pass, vc.pass);
        prop_assert!((v.residual - vc.residual).abs() <= 1e-12);
    }
}

#[test]
fn flat_and_synthetic_charts_pass_the_identity_suite() {
    for (name, dim) in [("FLAT4", 4), ("FLAT8", 8), ("SYNTH-QK-CHART", 4), ("SYNTH-QK-CHART", 8)] {
        let m = chart(name, dim);
        let pts = m.random_points(if dim == 4 { 8 } else { 3 }, 1).unwrap();
        let rep = verify_qk_identities(&m, &pts, &QkOptions::default()).unwrap();
        assert!(rep.quaternionic_kahler, "{name}");
        assert!(rep.passes(), "{name}/{dim}: {:?} {:?}", rep.identity_residuals, rep.equivalences);
        let v = rep.verdicts.as_ref().unwrap();
        assert!(v.flat.pass && v.ricci_flat.pass && v.scalar_flat.pass);
        assert!(rep.identity_residuals[EQ_QK] <= 1e-6);
        assert!(rep.identity_residuals[LEMMA_D_OM] <= 1e-6);
        assert_eq!(rep.informational.contains(&THM_EINSTEIN.to_string()), dim == 4);
        assert!(rep.equivalences.iter().all(|e| e.holds()));
    }
}

#[test]
fn warped_control_is_not_quaternionic_kahler() {
    let m = chart("WARP4", 4);
    let rep = verify_qk_identities(&m, &m.random_points(3, 1).unwrap(), &QkOptions::default()).unwrap();
    assert!(!rep.quaternionic_kahler);
    assert!(!rep.passes());
    assert!(rep.identity_residuals.is_empty());
    assert!(rep.diagnostics.iter().any(|d| d.contains("not quaternionic")));
}

#[test]
fn w1w3_package_on_the_synthetic_chart() {
    let m = chart("SYNTH-QK-CHART", 4);
    let pts = m.random_points(5, 2).unwrap();
    let rep = w1w3_analysis(&m, &pts, W1W3Gate::QuaternionicKahler, &QkOptions::default()).unwrap();
    assert!(rep.passes(), "{:?}", rep.checks);
    assert!(rep.flat.pass);
    let gated = w1w3_analysis(&m, &pts, W1W3Gate::ClassMembership, &QkOptions::default());
    assert!(matches!(gated, Err(Error::Precondition { .. })));
    let warp = chart("WARP4", 4);
    let e = w1w3_analysis(&warp, &warp.random_points(2, 0).unwrap(), W1W3Gate::QuaternionicKahler, &QkOptions::default());
    assert!(matches!(e, Err(Error::NotQuaternionicKahler { .. })));
}

#[test]
fn integrability_records() {
    let m = chart("SYNTH-QK-CHART", 4);
    let rep = integrability_propositions(&m, &m.random_points(4, 3).unwrap(), 1e-6, 100.0).unwrap();
    assert!(rep.implications.iter().all(|i| i.status == ImplicationStatus::Vacuous), "{rep:?}");
    let flat = chart("FLAT4", 4);
    let rep = integrability_propositions(&flat, &flat.random_points(2, 3).unwrap(), 1e-6, 100.0).unwrap();
    assert!(rep.implications.iter().all(|i| i.status == ImplicationStatus::Holds));
    // Pointwise data with all Nijenhuis tensors zero: θ₁ = −2ω₁, θ₂ = θ₃ = 0,
    // yet ∇J ≠ 0 at the single tangent space.
    let fx = synth_qk_usl(1, 5).unwrap();
    let rep = integrability_at(&fx.pointwise().unwrap().point, 1e-9, 100.0).unwrap();
    let int = &rep.implications[0];
    assert!(int.hypothesis <= 1e-9);
    assert!(int.intermediate.values().all(|v| *v <= 1e-9));
    assert_eq!(int.status, ImplicationStatus::Violated);
}

#[test]
fn null_forms_give_isotropic_non_parallel_structures() {
    for n in [1, 2] {
        let fx = synth_qk_null(n, 3).unwrap();
        let q: &QkPoint = &fx.pointwise().unwrap().point;
        let fit = q.extract().unwrap();
        let iso = isotropy_check(&fit, &q.g, &q.cov_j, 1e-9).unwrap();
        assert!(iso.norms_vanish && iso.omegas_null && !iso.hyper_kahler && iso.isotropic_hyper_kahler);
    }
}

#[test]
fn class_verdicts_survive_metric_scaling() {
    let base = chart("SYNTH-QK-CHART", 4);
    let pts = base.random_points(4, 8).unwrap();
    let reference = classify_chart(&base, &pts, 1e-6).unwrap();
    for c in [0.25, 3.0] {
        let g = flat_metric(1).g() * c;
        let h0 = base.clone();
        let metric: MetricField = Arc::new(move |_| Ok(g.clone()));
        let triple: TripleField = Arc::new(move |p: &[f64]| h0.triple_at(p));
        let m = ChartManifold::new(4, base.domain().clone(), metric, triple).unwrap();
        let scaled = classify_chart(&m, &pts, 1e-6).unwrap();
        for a in 0..3 {
            assert_eq!(scaled.reports[a].verdicts, reference.reports[a].verdicts);
        }
    }
}
