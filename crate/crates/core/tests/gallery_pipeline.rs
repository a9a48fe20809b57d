use std::sync::Arc;

use nhk_core::chart::{ChartManifold, ScalarField};
use nhk_core::classifier::{classify_chart, W0};
use nhk_core::gallery::{
    by_name, catalog, flat_metric, flat_triple, in_random_frame, synth_qk_chart, synth_qk_pointwise, FixtureParams,
    OmegaSource,
};
use nhk_core::structures::kahler_type_nullspace_dim;
use nhk_core::Alpha;

fn all_fixtures() -> Vec<nhk_core::gallery::Fixture> {
    let mut out = Vec::new();
    for e in catalog() {
        for dim in [4, 8] {
            let params = FixtureParams { dim: Some(dim), ..Default::default() };
            let fx = by_name(e.name, &params).unwrap();
            if !out.iter().any(|f: &nhk_core::gallery::Fixture| f.name == fx.name && f.dim() == fx.dim()) {
                out.push(fx);
            }
        }
    }
    out
}

fn charts() -> Vec<(String, ChartManifold)> {
    all_fixtures()
        .into_iter()
        .filter_map(|f| f.chart().cloned().map(|m| (format!("{}/{}", f.name, f.dim()), m)))
        .collect()
}

#[test]
fn every_fixture_meets_its_expectations() {
    for fx in all_fixtures() {
        for o in fx.check().unwrap() {
            assert!(o.ok, "{} (dim {}): {o:?}", fx.name, fx.dim());
        }
    }
}

#[test]
fn fixtures_are_deterministic() {
    for name in ["SYNTH-QK", "SYNTH-QK-USL", "SYNTH-QK-NULL", "SYNTH-QK-CHART", "WARP4"] {
        let p = FixtureParams { seed: Some(9), ..Default::default() };
        let a = by_name(name, &p).unwrap().observe().unwrap();
        let b = by_name(name, &p).unwrap().observe().unwrap();
        assert_eq!(a, b, "{name}");
    }
    let a = synth_qk_pointwise(1, OmegaSource::Seed(1)).unwrap();
    let b = synth_qk_pointwise(1, OmegaSource::Seed(2)).unwrap();
    assert_ne!(a.pointwise().unwrap().omega, b.pointwise().unwrap().omega);
}

#[test]
fn levi_civita_holds_on_every_chart() {
    for (name, m) in charts() {
        for p in m.random_points(6, 3).unwrap() {
            let (nabla_g, asym) = m.levi_civita_residual(&p).unwrap();
            assert!(nabla_g < 1e-7, "{name}: |∇g| = {nabla_g}");
            assert!(asym == 0.0, "{name}: Γ asymmetry {asym}");
        }
    }
}

#[test]
fn both_readings_of_the_structure_tensor_agree() {
    for (name, m) in charts() {
        for p in m.random_points(4, 4).unwrap() {
            for a in Alpha::ALL {
                let f1 = m.structural_f(&p, a).unwrap();
                let f2 = m.structural_f_via_metric(&p, a).unwrap();
                let diff = f1.max_abs_diff(&f2).unwrap();
                assert!(diff < 1e-7, "{name} J{}: {diff}", a.number());
            }
        }
    }
}

#[test]
fn kahler_for_two_structures_forces_hyper_kahler() {
    for (name, m) in charts() {
        let cls = classify_chart(&m, &m.random_points(4, 5).unwrap(), 1e-6).unwrap();
        if cls.reports[1].passes(W0) && cls.reports[2].passes(W0) {
            assert!(cls.hyper_kahler.pass, "{name}");
        }
    }
}

#[test]
fn gallery_triples_carry_no_kahler_type_curvature() {
    for n in [1, 2] {
        assert_eq!(kahler_type_nullspace_dim(&flat_metric(n), &flat_triple(n)).unwrap(), 0);
        // The rotated SYNTH-QK-CHART triple at a point, and a random change of frame.
        let m = by_name("SYNTH-QK-CHART", &FixtureParams { dim: Some(4 * n), ..Default::default() })
            .unwrap()
            .chart()
            .unwrap()
            .clone();
        let p = m.domain().center();
        assert_eq!(kahler_type_nullspace_dim(&m.metric_at(&p).unwrap(), &m.triple_at(&p).unwrap()).unwrap(), 0);
        if n == 1 {
            let fx = synth_qk_pointwise(n, OmegaSource::Seed(4)).unwrap();
            let moved = in_random_frame(fx.pointwise().unwrap(), 4).unwrap();
            assert_eq!(kahler_type_nullspace_dim(&moved.point.g, &moved.point.h).unwrap(), 0);
        }
    }
}

#[test]
fn constant_phi_reduces_to_the_flat_model() {
    let phi: ScalarField = Arc::new(|_: &[f64]| Ok(0.4));
    let fx = synth_qk_chart(1, phi).unwrap();
    let m = fx.chart().unwrap();
    let cls = classify_chart(m, &m.random_points(4, 1).unwrap(), 1e-9).unwrap();
    assert!(cls.reports.iter().all(|r| r.passes(W0)));
    assert!(cls.hyper_kahler.pass);
}

#[test]
fn extracted_omega_is_the_differential_of_phi() {
    let fx = by_name("SYNTH-QK-CHART", &FixtureParams::default()).unwrap();
    let m = fx.chart().unwrap();
    for p in m.random_points(20, 2).unwrap() {
        let w = nhk_core::qk::extracted_omegas(m, &p).unwrap();
        // φ = 0.5 sin(x₁) + 0.3 x₂ x₃
        let dphi = [0.5 * p[0].cos(), 0.3 * p[2], 0.3 * p[1], 0.0];
        for k in 0..4 {
            assert!((w[0][k] - dphi[k]).abs() < 1e-7, "{p:?}");
        }
        assert!(w[1].amax() < 1e-8 && w[2].amax() < 1e-8);
    }
}
