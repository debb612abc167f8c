//! Property tests: print/reparse stability, forward-mode gradients
//! against finite differences, evaluation determinism, and the restart
//! identity under random split times.

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use devroll_core::manifold::sphere_stereo;
use devroll_core::transport::{develop, restart};
use devroll_core::{ChartPoint, Expr, IntegratorOpts, TangentCurve};

/// Expression sources over x0..x2 and t with every partial operation
/// guarded, so evaluation is total on [-2, 2]⁴.
fn source_strategy() -> impl Strategy<Value = String> {
    let leaf = prop_oneof![
        (0usize..3).prop_map(|i| format!("x{i}")),
        Just("t".to_string()),
        (0.1f64..4.0).prop_map(|v| format!("{v:.3}")),
    ];
    leaf.prop_recursive(4, 48, 3, |inner| {
        prop_oneof![
            (inner.clone(), inner.clone()).prop_map(|(a, b)| format!("({a}) + ({b})")),
            (inner.clone(), inner.clone()).prop_map(|(a, b)| format!("({a}) - ({b})")),
            (inner.clone(), inner.clone()).prop_map(|(a, b)| format!("({a})*({b})")),
            (inner.clone(), inner.clone())
                .prop_map(|(a, b)| format!("({a})/(2 + tanh({b})^2)")),
            inner.clone().prop_map(|a| format!("-({a})")),
            (inner.clone(), 2i32..4).prop_map(|(a, k)| format!("tanh({a})^{k}")),
            inner.clone().prop_map(|a| format!("sin({a})")),
            inner.clone().prop_map(|a| format!("cos({a})")),
            inner.clone().prop_map(|a| format!("atan({a})")),
            inner.clone().prop_map(|a| format!("sqrt(1 + ({a})^2)")),
            inner.clone().prop_map(|a| format!("exp(tanh({a}))")),
            inner.clone().prop_map(|a| format!("log(2 + tanh({a}))")),
        ]
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn print_then_reparse_is_structural_identity(src in source_strategy()) {
        let parsed = Expr::parse(&src, 3).unwrap();
        let printed = parsed.to_string();
        let reparsed = Expr::parse(&printed, 3)
            .unwrap_or_else(|e| panic!("printed form `{printed}` failed: {e}"));
        prop_assert_eq!(parsed, reparsed);
    }

    #[test]
    fn gradients_match_central_differences(
        src in source_strategy(),
        x0 in -2.0f64..2.0,
        x1 in -2.0f64..2.0,
        x2 in -2.0f64..2.0,
        t in -2.0f64..2.0,
    ) {
        let e = Expr::parse(&src, 3).unwrap();
        let point = [x0, x1, x2];
        let (_, grad) = e.eval_with_grad(&point, t).unwrap();
        let h = 1e-6;
        for i in 0..3 {
            let mut hi = point;
            let mut lo = point;
            hi[i] += h;
            lo[i] -= h;
            let fd = (e.eval(&hi, t).unwrap() - e.eval(&lo, t).unwrap()) / (2.0 * h);
            let tol = 1e-6 * (1.0 + grad[i].abs());
            prop_assert!(
                (grad[i] - fd).abs() <= tol,
                "{src}: ∂{i} AD {} vs FD {}", grad[i], fd
            );
        }
    }

    #[test]
    fn evaluation_is_deterministic(
        src in source_strategy(),
        x0 in -2.0f64..2.0,
        x1 in -2.0f64..2.0,
        x2 in -2.0f64..2.0,
        t in -2.0f64..2.0,
    ) {
        let e = Expr::parse(&src, 3).unwrap();
        let a = e.eval(&[x0, x1, x2], t).unwrap();
        let b = e.eval(&[x0, x1, x2], t).unwrap();
        prop_assert_eq!(a.to_bits(), b.to_bits());
    }
}

/// The catalog's closed-form metric entries, each checked against finite
/// differences at 100 seeded random points.
#[test]
fn catalog_expressions_match_finite_differences() {
    let catalog: &[(&str, usize, [f64; 2], [f64; 2])] = &[
        ("4/((1 + x0*x0 + x1*x1)^2)", 2, [-2.0, -2.0], [2.0, 2.0]),
        ("1/(x1*x1)", 2, [-2.0, 0.2], [2.0, 3.0]),
        ("x0*(1 - x0)", 2, [0.05, -2.0], [0.95, 2.0]),
        ("sin(x0)*cos(x1) + exp(tanh(x0*x1))", 2, [-2.0, -2.0], [2.0, 2.0]),
        ("sqrt(1 + x0^2 + x1^2)", 2, [-2.0, -2.0], [2.0, 2.0]),
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for (src, n, lo, hi) in catalog {
        let e = Expr::parse(src, *n).unwrap();
        for _ in 0..100 {
            let point: Vec<f64> = (0..*n)
                .map(|i| rng.random_range(lo[i]..hi[i]))
                .collect();
            let (_, grad) = e.eval_with_grad(&point, 0.0).unwrap();
            for i in 0..*n {
                let mut a = point.clone();
                let mut b = point.clone();
                a[i] += 1e-6;
                b[i] -= 1e-6;
                let fd = (e.eval(&a, 0.0).unwrap() - e.eval(&b, 0.0).unwrap()) / 2e-6;
                let tol = 1e-6 * (1.0 + grad[i].abs());
                assert!(
                    (grad[i] - fd).abs() <= tol,
                    "{src} at {point:?}: AD {} vs FD {}",
                    grad[i],
                    fd
                );
            }
        }
    }
}

#[test]
fn development_is_deterministic() {
    let m = sphere_stereo::<f64>(1.0);
    let v = TangentCurve::from_exprs(
        ChartPoint::new(vec![0.1, -0.2]),
        vec![
            Expr::parse("0.4*cos(t)", 0).unwrap(),
            Expr::parse("0.4*sin(t)", 0).unwrap(),
        ],
        1.0,
    );
    let a = develop(&m, &v, &IntegratorOpts::default()).unwrap();
    let b = develop(&m, &v, &IntegratorOpts::default()).unwrap();
    assert_eq!(a.samples.len(), b.samples.len());
    for (sa, sb) in a.samples.iter().zip(&b.samples) {
        assert_eq!(sa.0.to_bits(), sb.0.to_bits());
        for (xa, xb) in sa.1.x.iter().zip(sb.1.x.iter()) {
            assert_eq!(xa.to_bits(), xb.to_bits());
        }
    }
}

#[test]
fn engine_types_are_send_and_sync() {
    fn assert_send_sync<T: Send + Sync>() {}
    assert_send_sync::<Expr>();
    assert_send_sync::<devroll_core::ChartManifold64>();
    assert_send_sync::<devroll_core::TangentCurve64>();
    assert_send_sync::<devroll_core::DevelopmentResult64>();
    assert_send_sync::<devroll_core::Distribution64>();
    assert_send_sync::<devroll_core::VariationFamily64>();
}

#[test]
fn engine_is_generic_over_the_scalar() {
    // the whole pipeline also instantiates at f32
    let m = devroll_core::manifold::euclidean::<f32>(2);
    let v = TangentCurve::constant(ChartPoint::new(vec![0.0f32, 0.0]), vec![1.0f32, 0.5], 1.0);
    let dev = develop(&m, &v, &IntegratorOpts::<f32>::default()).unwrap();
    assert!((dev.endpoint().x[0] - 1.0).abs() < 1e-5);
    assert!((dev.endpoint().x[1] - 0.5).abs() < 1e-5);

    let e = Expr::parse("x0*x0 + sin(x1)", 2).unwrap();
    let single: f32 = e.eval(&[2.0f32, 0.0], 0.0).unwrap();
    assert!((single - 4.0).abs() < 1e-6);
}

#[test]
fn restart_identity_at_random_split_times() {
    let m = sphere_stereo::<f64>(1.0);
    let v = TangentCurve::from_exprs(
        ChartPoint::new(vec![0.0, 0.0]),
        vec![
            Expr::parse("0.3*cos(t)", 0).unwrap(),
            Expr::parse("0.2 + 0.2*sin(2*t)", 0).unwrap(),
        ],
        1.0,
    );
    let opts = IntegratorOpts::default();
    let full = develop(&m, &v, &opts).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..10 {
        let t0: f64 = rng.random_range(0.05..0.95);
        let tail = restart(&m, &full, t0, &v.tail(t0), &opts).unwrap();
        let diff = (&tail.endpoint().x - &full.endpoint().x).norm();
        assert!(diff < 1e-8, "split at {t0}: endpoint differs by {diff}");
    }
}
