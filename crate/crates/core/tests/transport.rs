//! Development, geodesic, boundary-stopping, restart and parallel
//! transport against independent oracles and closed forms.

use approx::assert_abs_diff_eq;
use nalgebra::{DMatrix, DVector};

use devroll_core::manifold::{self, euclidean, flat_torus, hyperbolic_halfplane, slab, sphere_stereo};
use devroll_core::transport::{
    develop, develop_with_frame, geodesic, loop_transport, parallel_transport, restart,
    transport_matrix, DevelopmentStatus, IntegratorOpts, Method, SampledPath, TangentCurve,
};
use devroll_core::{ChartPoint, Expr};
use devroll_testkit as oracle;

fn pt(coords: &[f64]) -> ChartPoint<f64> {
    ChartPoint::new(coords.to_vec())
}

fn opts() -> IntegratorOpts<f64> {
    IntegratorOpts::default()
}

#[test]
fn flat_development_is_a_straight_segment() {
    let m = euclidean::<f64>(2);
    let v = TangentCurve::constant(pt(&[0.0, 0.0]), vec![1.0, 0.0], 1.0);
    let dev = develop(&m, &v, &opts()).unwrap();
    assert!(dev.status.is_completed());
    let end = dev.endpoint();
    assert_abs_diff_eq!(end.x[0], 1.0, epsilon = 1e-12);
    assert_abs_diff_eq!(end.x[1], 0.0, epsilon = 1e-15);
    for (_, state) in &dev.samples {
        assert_eq!(state.frame, DMatrix::identity(2, 2));
    }
    // initial conditions are exact
    assert_eq!(dev.samples[0].1.x, DVector::from_vec(vec![0.0, 0.0]));
    assert_eq!(dev.samples[0].1.frame, DMatrix::identity(2, 2));
}

#[test]
fn constant_curve_develops_to_the_geodesic_oracle() {
    // development of a constant curve is a geodesic: compare against the
    // dedicated second-order geodesic-equation integration
    let m = sphere_stereo::<f64>(1.0);
    let p = [0.2, -0.1];
    let v0 = [0.31, 0.17];
    let dev = geodesic(&m, &pt(&p), v0.to_vec(), 1.0, &opts()).unwrap();
    let orc = oracle::geodesic_oracle(&m, &p, &v0, &[], 1.0, 2.5e-4);
    assert!(dev.status.is_completed());
    let diff = (&dev.endpoint().x - &orc.x).norm();
    assert!(diff < 1e-9, "endpoint differs from oracle by {diff}");
}

#[test]
fn broken_geodesic_matches_segment_wise_oracle() {
    // piecewise-constant curve = broken geodesic: oracle concatenates two
    // geodesic integrations, transporting the second velocity by the
    // transport ODE along the first segment
    let m = sphere_stereo::<f64>(1.0);
    let p = [0.1, 0.05];
    let v1 = [0.4, 0.1];
    let v2 = [-0.15, 0.45];
    let curve = TangentCurve::piecewise_constant(
        pt(&p),
        vec![(0.5, v1.to_vec()), (1.0, v2.to_vec())],
    );
    let dev = develop(&m, &curve, &opts()).unwrap();

    let seg1 = oracle::geodesic_oracle(
        &m,
        &p,
        &v1,
        &[DVector::from_vec(v2.to_vec())],
        0.5,
        1.25e-4,
    );
    let q: Vec<f64> = seg1.x.iter().copied().collect();
    let carried: Vec<f64> = seg1.carried[0].iter().copied().collect();
    let seg2 = oracle::geodesic_oracle(&m, &q, &carried, &[], 0.5, 1.25e-4);

    let diff = (&dev.endpoint().x - &seg2.x).norm();
    assert!(diff < 1e-8, "broken geodesic differs from oracle by {diff}");
}

#[test]
fn slab_development_stops_on_the_boundary() {
    let m = slab::<f64>(1.0);
    let v = TangentCurve::constant(pt(&[0.5]), vec![1.0], 1.0);
    let dev = develop(&m, &v, &opts()).unwrap();
    match dev.status {
        DevelopmentStatus::HitBoundary(t_star) => {
            assert_abs_diff_eq!(t_star, 0.5, epsilon = 1e-9);
            assert_abs_diff_eq!(dev.endpoint().x[0], 1.0, epsilon = 1e-9);
        }
        other => panic!("expected boundary stop, got {other:?}"),
    }
}

#[test]
fn development_exiting_the_chart_reports_left_chart() {
    let m = manifold::from_exprs::<f64>(
        "strip",
        2,
        &[
            vec!["1".into(), "0".into()],
            vec!["0".into(), "1".into()],
        ],
        vec![Expr::parse("1 - x0", 2).unwrap()],
        None,
    )
    .unwrap();
    let v = TangentCurve::constant(pt(&[0.0, 0.0]), vec![1.0, 0.0], 2.0);
    let dev = develop(&m, &v, &opts()).unwrap();
    match dev.status {
        DevelopmentStatus::LeftChart(t_star) => {
            assert_abs_diff_eq!(t_star, 1.0, epsilon = 1e-3);
        }
        other => panic!("expected chart exit, got {other:?}"),
    }
}

#[test]
fn degenerate_initial_frame_is_reported() {
    let m = euclidean::<f64>(2);
    let v = TangentCurve::constant(pt(&[0.0, 0.0]), vec![1.0, 0.0], 1.0);
    let mut frame0 = DMatrix::identity(2, 2);
    frame0[(1, 1)] = 1e-13;
    let dev = develop_with_frame(&m, &v, &frame0, &opts()).unwrap();
    assert!(matches!(dev.status, DevelopmentStatus::FrameDegenerate(_)));
}

#[test]
fn sphere_geodesics_match_closed_forms() {
    let m = sphere_stereo::<f64>(1.0);

    // equator circle: from (1,0) with direction (0,1), angle = arclength
    let dev = geodesic(&m, &pt(&[1.0, 0.0]), vec![0.0, 1.0], std::f64::consts::PI, &opts())
        .unwrap();
    let anti = oracle::stereo_antipode(&[1.0, 0.0]);
    assert!(dev.status.is_completed());
    assert_abs_diff_eq!(dev.endpoint().x[0], anti[0], epsilon = 1e-6);
    assert_abs_diff_eq!(dev.endpoint().x[1], anti[1], epsilon = 1e-6);

    // meridian from the chart origin: chart radius tan(t/2)
    let dev = geodesic(
        &m,
        &pt(&[0.0, 0.0]),
        vec![0.5, 0.0],
        std::f64::consts::FRAC_PI_2,
        &opts(),
    )
    .unwrap();
    assert_abs_diff_eq!(dev.endpoint().x[0], 1.0, epsilon = 1e-7);
    assert_abs_diff_eq!(dev.endpoint().x[1], 0.0, epsilon = 1e-12);
}

#[test]
fn hyperbolic_geodesic_matches_closed_form() {
    let m = hyperbolic_halfplane::<f64>();
    let dev = geodesic(&m, &pt(&[0.0, 1.0]), vec![1.0, 0.0], 1.0, &opts()).unwrap();
    let (x, y) = oracle::hyperbolic_geodesic_from_i(1.0);
    assert_abs_diff_eq!(dev.endpoint().x[0], x, epsilon = 1e-7);
    assert_abs_diff_eq!(dev.endpoint().x[1], y, epsilon = 1e-7);
}

use oracle::catalog_long_curves;

#[test]
fn gram_drift_stays_small_over_long_developments() {
    for (m, curve) in catalog_long_curves() {
        let dev = develop(&m, &curve, &opts()).unwrap();
        assert!(
            dev.status.is_completed(),
            "{}: {:?}",
            m.name(),
            dev.status
        );
        assert!(
            dev.diagnostics.max_gram_drift <= 1e-7,
            "{}: Gram drift {}",
            m.name(),
            dev.diagnostics.max_gram_drift
        );
    }
}

#[test]
fn defining_residual_at_accepted_steps() {
    // |γ'(t) − Σ v^j x_j^i ∂_i| from a 4th-order stencil on the stored
    // trajectory stays at the h⁴ scale
    let m = sphere_stereo::<f64>(1.0);
    let curve = TangentCurve::from_exprs(
        pt(&[0.1, -0.2]),
        vec![
            Expr::parse("0.4*cos(t)", 0).unwrap(),
            Expr::parse("0.4*sin(t)", 0).unwrap(),
        ],
        2.0,
    );
    let dev = develop(&m, &curve, &opts()).unwrap();
    let h: f64 = 1e-3;
    let mut vmax: f64 = 0.0;
    for v in &dev.v_samples {
        vmax = vmax.max(v.amax());
    }
    let tolerance = 10.0 * h.powi(4) * (1.0 + vmax);
    let mut worst: f64 = 0.0;
    for k in 2..dev.samples.len() - 2 {
        let stencil = (-&dev.samples[k + 2].1.x + &dev.samples[k + 1].1.x * 8.0
            - &dev.samples[k - 1].1.x * 8.0
            + &dev.samples[k - 2].1.x)
            / (12.0 * h);
        let predicted = dev.samples[k].1.frame.transpose() * &dev.v_samples[k];
        worst = worst.max((stencil - predicted).amax());
    }
    assert!(
        worst <= tolerance,
        "defining residual {worst} above {tolerance}"
    );
}

#[test]
fn rk4_convergence_order_on_sphere_geodesic() {
    let m = sphere_stereo::<f64>(1.0);
    let p = pt(&[1.0, 0.0]);
    let target = DVector::from_vec(vec![-1.0, 0.0]);
    let mut lognh = Vec::new();
    let mut logerr = Vec::new();
    let mut h = 4e-2;
    for _ in 0..5 {
        let o = IntegratorOpts::with_step(h);
        let dev = geodesic(&m, &p, vec![0.0, 1.0], std::f64::consts::PI, &o).unwrap();
        let err = (&dev.endpoint().x - &target).norm();
        lognh.push(h.ln());
        logerr.push(err.ln());
        h /= 2.0;
    }
    let slope = oracle::fit_slope(&lognh, &logerr);
    assert!(
        (slope - 4.0).abs() <= 0.2,
        "convergence slope {slope}, errors {logerr:?}"
    );
}

#[test]
fn restart_identity_flat_and_curved() {
    // flat split: identical to machine precision
    let m = euclidean::<f64>(2);
    let v = TangentCurve::from_exprs(
        pt(&[0.0, 0.0]),
        vec![
            Expr::parse("cos(t)", 0).unwrap(),
            Expr::parse("t", 0).unwrap(),
        ],
        1.0,
    );
    let full = develop(&m, &v, &opts()).unwrap();
    let tail = restart(&m, &full, 0.5, &v.tail(0.5), &opts()).unwrap();
    let diff = (&tail.endpoint().x - &full.endpoint().x).norm();
    assert!(diff < 1e-12, "flat restart mismatch {diff}");

    // sphere, split off the sample grid
    let m = sphere_stereo::<f64>(1.0);
    let v = TangentCurve::from_exprs(
        pt(&[0.0, 0.0]),
        vec![
            Expr::parse("0.3*cos(t)", 0).unwrap(),
            Expr::parse("0.3*sin(t)", 0).unwrap(),
        ],
        1.0,
    );
    let full = develop(&m, &v, &opts()).unwrap();
    let t0 = 0.4 + 1.7e-4;
    let tail = restart(&m, &full, t0, &v.tail(t0), &opts()).unwrap();
    let diff = (&tail.endpoint().x - &full.endpoint().x).norm();
    assert!(diff < 1e-8, "sphere restart mismatch {diff}");

    // t0 = horizon: tail of length zero returns the final state
    let tail = restart(&m, &full, 1.0, &v.tail(1.0), &opts()).unwrap();
    assert_eq!(tail.samples.len(), 1);
    let diff = (&tail.endpoint().x - &full.endpoint().x).norm();
    assert!(diff < 1e-14);
}

#[test]
fn transport_is_identity_on_flat_manifolds() {
    let m = euclidean::<f64>(2);
    let ts: Vec<f64> = (0..=100).map(|k| k as f64 / 100.0).collect();
    let points: Vec<DVector<f64>> = ts
        .iter()
        .map(|&t| DVector::from_vec(vec![t.cos(), t.sin()]))
        .collect();
    let path = SampledPath::new(ts, points).unwrap();
    let x0 = DVector::from_vec(vec![0.3, -0.7]);
    let moved = parallel_transport(&m, &path, &x0, &opts()).unwrap();
    assert_eq!(moved, x0);

    // flat torus loop: holonomy is trivial
    let m = flat_torus::<f64>(2);
    let ts: Vec<f64> = (0..=200).map(|k| k as f64 / 200.0).collect();
    let points: Vec<DVector<f64>> = ts
        .iter()
        .map(|&t| {
            let a = 2.0 * std::f64::consts::PI * t;
            DVector::from_vec(vec![a.cos(), a.sin()])
        })
        .collect();
    let path = SampledPath::new(ts, points).unwrap();
    let holonomy = transport_matrix(&m, &path, &opts()).unwrap();
    assert!((holonomy - DMatrix::identity(2, 2)).amax() < 1e-9);
}

#[test]
fn sphere_right_triangle_holonomy_is_a_quarter_turn() {
    let m = sphere_stereo::<f64>(1.0);
    let legs = oracle::octant_triangle_legs();
    let refs: Vec<&SampledPath<f64>> = legs.iter().collect();
    let holonomy = loop_transport(&m, &refs, &opts()).unwrap();
    // at the chart origin the metric is conformal, so the coordinate
    // matrix of an isometry fixing the origin is orthogonal
    let angle = holonomy[(1, 0)].atan2(holonomy[(0, 0)]);
    assert!(
        (angle.abs() - std::f64::consts::FRAC_PI_2).abs() < 1e-4,
        "holonomy angle {angle}"
    );
    let rot = DMatrix::from_row_slice(
        2,
        2,
        &[angle.cos(), -angle.sin(), angle.sin(), angle.cos()],
    );
    assert!((holonomy - rot).amax() < 1e-4);
}

#[test]
fn transport_is_linear_isometric_and_reversible() {
    let m = sphere_stereo::<f64>(1.0);
    let dev = geodesic(&m, &pt(&[0.3, 0.2]), vec![0.2, -0.3], 2.0, &opts()).unwrap();
    let path = SampledPath::from_development(&dev);
    let mat = transport_matrix(&m, &path, &opts()).unwrap();

    // linearity on a basis
    let a = DVector::from_vec(vec![1.0, 0.0]);
    let b = DVector::from_vec(vec![0.0, 1.0]);
    let combo = parallel_transport(&m, &path, &(&a * 2.0 + &b * 3.0), &opts()).unwrap();
    assert!((combo - (&mat * a * 2.0 + &mat * b * 3.0)).amax() < 1e-13);

    // g-norm preservation
    let p_start = pt(&[0.3, 0.2]);
    let p_end = ChartPoint::new(path.end().as_slice().to_vec());
    let x0 = DVector::from_vec(vec![0.7, -0.4]);
    let n0 = m.norm(&p_start, &x0).unwrap();
    let n1 = m.norm(&p_end, &(&mat * &x0)).unwrap();
    assert!((n1 - n0).abs() < 1e-7, "norm drift {}", (n1 - n0).abs());

    // reverse path composes to the identity
    let back = transport_matrix(&m, &path.reversed(), &opts()).unwrap();
    assert!((back * mat - DMatrix::identity(2, 2)).amax() < 1e-7);
}

#[test]
fn transported_norm_preserved_across_catalog() {
    for (m, curve) in catalog_long_curves() {
        let dev = develop(&m, &curve, &opts()).unwrap();
        let path = SampledPath::from_development(&dev);
        let mat = transport_matrix(&m, &path, &opts()).unwrap();
        let x0 = DVector::from_fn(m.dim(), |i, _| 0.3 + 0.1 * i as f64);
        let p_start = ChartPoint::new(path.start().as_slice().to_vec());
        let p_end = ChartPoint::new(path.end().as_slice().to_vec());
        let n0 = m.norm(&p_start, &x0).unwrap();
        let n1 = m.norm(&p_end, &(&mat * &x0)).unwrap();
        assert!(
            (n1 - n0).abs() <= 1e-7,
            "{}: transport norm drift {}",
            m.name(),
            (n1 - n0).abs()
        );
    }
}

#[test]
fn hermite_sampled_curve_develops_like_its_expression_form() {
    let m = sphere_stereo::<f64>(1.0);
    let base = pt(&[0.0, 0.1]);
    let exprs = TangentCurve::from_exprs(
        base.clone(),
        vec![
            Expr::parse("0.4*cos(t)", 0).unwrap(),
            Expr::parse("0.3*sin(2*t)", 0).unwrap(),
        ],
        1.0,
    );
    let ts: Vec<f64> = (0..=1000).map(|k| k as f64 / 1000.0).collect();
    let values: Vec<DVector<f64>> = ts
        .iter()
        .map(|&t| {
            DVector::from_vec(vec![0.4 * t.cos(), 0.3 * (2.0 * t).sin()])
        })
        .collect();
    let sampled = TangentCurve::from_samples(base, ts, values);
    let da = develop(&m, &exprs, &opts()).unwrap();
    let db = develop(&m, &sampled, &opts()).unwrap();
    let diff = (&da.endpoint().x - &db.endpoint().x).norm();
    assert!(diff < 1e-8, "sampled-curve development differs by {diff}");
}

#[test]
fn rkf45_also_stops_on_the_boundary() {
    let m = slab::<f64>(1.0);
    let o = IntegratorOpts {
        step: 5e-2,
        method: Method::Rkf45 {
            rel_tol: 1e-10,
            abs_tol: 1e-12,
        },
        max_steps: 1_000_000,
    };
    let v = TangentCurve::constant(pt(&[0.5]), vec![1.0], 1.0);
    let dev = develop(&m, &v, &o).unwrap();
    match dev.status {
        DevelopmentStatus::HitBoundary(t_star) => {
            assert_abs_diff_eq!(t_star, 0.5, epsilon = 1e-9);
        }
        other => panic!("expected boundary stop, got {other:?}"),
    }
}

#[test]
fn rkf45_reaches_the_same_endpoint() {
    let m = sphere_stereo::<f64>(1.0);
    let o = IntegratorOpts {
        step: 1e-2,
        method: Method::Rkf45 {
            rel_tol: 1e-10,
            abs_tol: 1e-12,
        },
        max_steps: 1_000_000,
    };
    let dev = geodesic(&m, &pt(&[1.0, 0.0]), vec![0.0, 1.0], std::f64::consts::PI, &o).unwrap();
    assert!(dev.status.is_completed());
    assert_abs_diff_eq!(dev.endpoint().x[0], -1.0, epsilon = 1e-6);
    assert_abs_diff_eq!(dev.endpoint().x[1], 0.0, epsilon = 1e-6);
}
