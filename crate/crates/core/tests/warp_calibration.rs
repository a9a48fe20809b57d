use nhk_core::chart::FdConfig;
use nhk_core::classifier::{classify_chart, W0};
use nhk_core::gallery::{warp_christoffel, warp_riemann, warp_scalar, warped_control, Warp};

#[test]
fn christoffel_and_curvature_match_closed_forms() {
    for (n, c) in [(1, 1.0), (1, -0.4), (2, 0.6)] {
        let warp = Warp::exponential(c);
        let fx = warped_control(n, warp.clone()).unwrap();
        let m = fx.chart().unwrap();
        let count = if n == 1 { 50 } else { 6 };
        for p in m.random_points(count, 11).unwrap() {
            let gamma = m.christoffel(&p).unwrap();
            let eg = gamma.max_abs_diff(&warp_christoffel(n, &warp, &p).unwrap()).unwrap();
            assert!(eg < 1e-8, "Γ error {eg} at {p:?}");
            let (nabla_g, _) = m.levi_civita_residual(&p).unwrap();
            assert!(nabla_g < 1e-7);
            let curv = m.curvature(&p).unwrap();
            let er = curv.r4.max_abs_diff(&warp_riemann(n, &warp, &p).unwrap()).unwrap();
            assert!(er < 1e-6, "R error {er} at {p:?}");
            assert!((curv.tau - warp_scalar(n, &warp, &p)).abs() < 1e-6);
        }
    }
}

#[test]
fn fourth_order_convergence_under_step_halving() {
    let warp = Warp::exponential(1.0);
    let fx = warped_control(1, warp.clone()).unwrap();
    let m = fx.chart().unwrap();
    let p = [-0.3, 0.2, 0.1, -0.2];
    let err = |h: f64| {
        let c = m.clone().with_fd(FdConfig { step: h, ..*m.fd() }).unwrap();
        c.christoffel(&p).unwrap().max_abs_diff(&warp_christoffel(1, &warp, &p).unwrap()).unwrap()
    };
    let (e1, e2, e3) = (err(0.08), err(0.04), err(0.02));
    assert!((e1 / e2).log2() >= 3.5, "{e1} {e2}");
    assert!((e2 / e3).log2() >= 3.5, "{e2} {e3}");
}

#[test]
fn nonconstant_warp_breaks_kahler_type() {
    let fx = warped_control(1, Warp::exponential(0.5)).unwrap();
    let m = fx.chart().unwrap();
    let cls = classify_chart(m, &m.random_points(4, 0).unwrap(), 1e-6).unwrap();
    assert!(cls.reports.iter().any(|r| !r.passes(W0)));
    let flat = warped_control(1, Warp::exponential(0.0)).unwrap();
    let m = flat.chart().unwrap();
    let cls = classify_chart(m, &m.random_points(4, 0).unwrap(), 1e-9).unwrap();
    assert!(cls.reports.iter().all(|r| r.passes(W0)));
}
