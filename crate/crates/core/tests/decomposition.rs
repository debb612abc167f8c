//! Distribution machinery: tangent splitting, parallelism residuals,
//! parallelogram/holonomy identities, curvature splitting, the transfer
//! construction (with negative controls), local product sampling, and
//! leaf recurrence against a lattice oracle.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use devroll_core::decomposition::{
    cah_transfer, cah_welldefined_check, check_parallel, curvature_split_check,
    curvature_transport_invariance_check, derham_local_isometry, factor_distributions,
    leaf_trace, parallelogram_check, slab_torus_distributions, split_tangent, Distribution,
    LinearIsometry, RecurrenceOpts,
};
use devroll_core::manifold::{
    euclidean, hyperbolic_halfplane, product, slab_torus, sphere_stereo,
};
use devroll_core::transport::{develop, geodesic, restart, SampledPath};
use devroll_core::variation::VariationFamily;
use devroll_core::{ChartPoint, Expr, IntegratorOpts, TangentCurve, Tangent};

const GOLDEN: f64 = 0.618_033_988_749_894_9;

fn pt(coords: &[f64]) -> ChartPoint<f64> {
    ChartPoint::new(coords.to_vec())
}

fn opts() -> IntegratorOpts<f64> {
    IntegratorOpts::default()
}

// -------------------------------------------------------------------
// splitting and projector invariants
// -------------------------------------------------------------------

#[test]
fn split_tangent_matches_explicit_linear_algebra() {
    let r = GOLDEN;
    let (t1, t2) = slab_torus_distributions::<f64>(r);
    let m = slab_torus::<f64>(r);
    let p = pt(&[0.5, 0.0, 0.0]);
    let w = Tangent::new(p.clone(), vec![0.0, 1.0, 0.0]);
    let (w1, w2) = split_tangent(&t1, &t2, &w).unwrap();

    // explicit: P1 ∂x = (∂x + r ∂y)/(1+r²)
    let denom = 1.0 + r * r;
    assert!((w1.components[1] - 1.0 / denom).abs() < 1e-15);
    assert!((w1.components[2] - r / denom).abs() < 1e-15);
    // reconstruction and g-orthogonality
    let sum = &w1.components + &w2.components;
    assert!((sum - &w.components).amax() < 1e-15);
    let g = m.metric_at(&p).unwrap();
    assert!((&g * &w1.components).dot(&w2.components).abs() < 1e-15);

    // a vector already in image(P1) splits as (w, 0)
    let v = Tangent::new(p.clone(), vec![0.3, 0.5, 0.5 * r]);
    let (v1, v2) = split_tangent(&t1, &t2, &v).unwrap();
    assert!((&v1.components - &v.components).amax() < 1e-15);
    assert!(v2.components.amax() < 1e-15);

    // zero splits as zero
    let z = Tangent::new(p, vec![0.0, 0.0, 0.0]);
    let (z1, z2) = split_tangent(&t1, &t2, &z).unwrap();
    assert_eq!(z1.components.amax(), 0.0);
    assert_eq!(z2.components.amax(), 0.0);
}

#[test]
fn projector_invariants_hold_at_random_points() {
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    let st = slab_torus::<f64>(GOLDEN);
    let (t1, t2) = slab_torus_distributions::<f64>(GOLDEN);
    for _ in 0..100 {
        let p = pt(&[
            rng.random_range(0.05..0.95),
            rng.random_range(-2.0..2.0),
            rng.random_range(-2.0..2.0),
        ]);
        assert!(t1.invariants_residual(&st, &p).unwrap() < 1e-10);
        assert!(t2.invariants_residual(&st, &p).unwrap() < 1e-10);
    }

    let prod = product(&sphere_stereo::<f64>(1.0), &euclidean(1)).unwrap();
    let (d1, d2) = factor_distributions::<f64>(2, 1);
    for _ in 0..100 {
        let p = pt(&[
            rng.random_range(-1.5..1.5),
            rng.random_range(-1.5..1.5),
            rng.random_range(-3.0..3.0),
        ]);
        assert!(d1.invariants_residual(&prod, &p).unwrap() < 1e-10);
        assert!(d2.invariants_residual(&prod, &p).unwrap() < 1e-10);
    }
}

// -------------------------------------------------------------------
// parallelism of distributions
// -------------------------------------------------------------------

#[test]
fn constant_distributions_on_flat_manifolds_are_parallel() {
    let m = slab_torus::<f64>(GOLDEN);
    let (t1, t2) = slab_torus_distributions::<f64>(GOLDEN);
    let v = TangentCurve::from_exprs(
        pt(&[0.5, 0.0, 0.0]),
        vec![
            Expr::parse("0.2*cos(t)", 0).unwrap(),
            Expr::parse("0.8", 0).unwrap(),
            Expr::parse("0.4*sin(t)", 0).unwrap(),
        ],
        2.0,
    );
    let dev = develop(&m, &v, &opts()).unwrap();
    let path = SampledPath::from_development(&dev);
    assert!(check_parallel(&m, &t1, &path, &opts()).unwrap() <= 1e-9);
    assert!(check_parallel(&m, &t2, &path, &opts()).unwrap() <= 1e-9);
}

#[test]
fn product_factor_distributions_are_parallel() {
    let m = product(&sphere_stereo::<f64>(1.0), &euclidean(1)).unwrap();
    let (d1, d2) = factor_distributions::<f64>(2, 1);
    let v = TangentCurve::from_exprs(
        pt(&[0.1, 0.0, 0.0]),
        vec![
            Expr::parse("0.3*cos(t)", 0).unwrap(),
            Expr::parse("0.3*sin(t)", 0).unwrap(),
            Expr::parse("0.5", 0).unwrap(),
        ],
        2.0,
    );
    let dev = develop(&m, &v, &opts()).unwrap();
    let path = SampledPath::from_development(&dev);
    assert!(check_parallel(&m, &d1, &path, &opts()).unwrap() <= 1e-7);
    assert!(check_parallel(&m, &d2, &path, &opts()).unwrap() <= 1e-7);
}

#[test]
fn coordinate_line_field_on_the_sphere_is_not_parallel() {
    // negative control: holonomy around a small loop rotates the line
    let m = sphere_stereo::<f64>(1.0);
    let d = Distribution::constant(
        DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]),
        1,
    );
    let v = TangentCurve::from_exprs(
        pt(&[0.0, 0.0]),
        vec![
            Expr::parse("cos(6.283185307179586*t)", 0).unwrap(),
            Expr::parse("sin(6.283185307179586*t)", 0).unwrap(),
        ],
        1.0,
    );
    let dev = develop(&m, &v, &opts()).unwrap();
    let path = SampledPath::from_development(&dev);
    let resid = check_parallel(&m, &d, &path, &opts()).unwrap();
    assert!(resid > 1e-3, "expected non-parallel residual, got {resid}");
}

// -------------------------------------------------------------------
// parallelogram / holonomy identities
// -------------------------------------------------------------------

#[test]
fn parallelogram_on_flat_product_is_exact() {
    let m = product(&euclidean::<f64>(1), &euclidean(1)).unwrap();
    let (d1, d2) = factor_distributions::<f64>(1, 1);
    let p = pt(&[0.0, 0.0]);
    let v1 = TangentCurve::constant(p.clone(), vec![0.7, 0.0], 1.0);
    let v2 = TangentCurve::constant(p.clone(), vec![0.0, -0.4], 1.0);
    let rep = parallelogram_check(&m, &d1, &d2, &p, &v1, &v2, 1.0, &opts()).unwrap();
    assert!(rep.all_completed());
    assert!(rep.endpoint_mismatch < 1e-12);
    assert!(rep.holonomy_deviation < 1e-12);
}

#[test]
fn parallelogram_on_curved_product() {
    let m = product(&sphere_stereo::<f64>(1.0), &euclidean(1)).unwrap();
    let (d1, d2) = factor_distributions::<f64>(2, 1);
    let p = pt(&[0.1, -0.2, 0.0]);
    let v1 = TangentCurve::constant(p.clone(), vec![0.3, 0.2, 0.0], 1.0);
    let v2 = TangentCurve::constant(p.clone(), vec![0.0, 0.0, 0.8], 1.0);
    let rep = parallelogram_check(&m, &d1, &d2, &p, &v1, &v2, 1.0, &opts()).unwrap();
    assert!(rep.all_completed());
    assert!(rep.endpoint_mismatch <= 1e-7, "mismatch {}", rep.endpoint_mismatch);
    assert!(rep.holonomy_deviation <= 1e-7, "deviation {}", rep.holonomy_deviation);
}

#[test]
fn parallelogram_on_slab_torus_with_generic_curves() {
    let m = slab_torus::<f64>(GOLDEN);
    let (t1, t2) = slab_torus_distributions::<f64>(GOLDEN);
    let p = pt(&[0.5, 0.0, 0.0]);
    let r = GOLDEN;
    let norm = (1.0 + r * r).sqrt();
    // generic smooth curves inside each distribution
    let v1 = TangentCurve::from_exprs(
        p.clone(),
        vec![
            Expr::parse("0.25*cos(2*t)", 0).unwrap(),
            Expr::parse(&format!("0.6*sin(t)/{norm}"), 0).unwrap(),
            Expr::parse(&format!("{r}*0.6*sin(t)/{norm}"), 0).unwrap(),
        ],
        1.0,
    );
    let v2 = TangentCurve::from_exprs(
        p.clone(),
        vec![
            Expr::parse("0", 0).unwrap(),
            Expr::parse(&format!("-{r}*(0.5 + 0.3*t)/{norm}"), 0).unwrap(),
            Expr::parse(&format!("(0.5 + 0.3*t)/{norm}"), 0).unwrap(),
        ],
        1.0,
    );
    let rep = parallelogram_check(&m, &t1, &t2, &p, &v1, &v2, 1.0, &opts()).unwrap();
    assert!(rep.all_completed());
    assert!(rep.endpoint_mismatch <= 1e-8, "mismatch {}", rep.endpoint_mismatch);
    assert!(rep.holonomy_deviation <= 1e-8, "deviation {}", rep.holonomy_deviation);
}

#[test]
fn parallelogram_holds_for_random_slab_torus_data() {
    let r = GOLDEN;
    let m = slab_torus::<f64>(r);
    let (t1, t2) = slab_torus_distributions::<f64>(r);
    let p = pt(&[0.5, 0.0, 0.0]);
    let norm = (1.0 + r * r).sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(67);
    for _ in 0..5 {
        let (a, b, c) = (
            rng.random_range(-0.2..0.2),
            rng.random_range(-0.4..0.4),
            rng.random_range(0.5..2.0),
        );
        let v1 = TangentCurve::from_exprs(
            p.clone(),
            vec![
                Expr::parse(&format!("{a}*cos({c}*t)"), 0).unwrap(),
                Expr::parse(&format!("{b}*sin(t)/{norm}"), 0).unwrap(),
                Expr::parse(&format!("{r}*{b}*sin(t)/{norm}"), 0).unwrap(),
            ],
            1.0,
        );
        let (d, e) = (rng.random_range(-0.5..0.5), rng.random_range(-0.3..0.3));
        let v2 = TangentCurve::from_exprs(
            p.clone(),
            vec![
                Expr::parse("0", 0).unwrap(),
                Expr::parse(&format!("-{r}*({d} + {e}*t)/{norm}"), 0).unwrap(),
                Expr::parse(&format!("({d} + {e}*t)/{norm}"), 0).unwrap(),
            ],
            1.0,
        );
        let t = rng.random_range(0.3..1.0);
        let rep = parallelogram_check(&m, &t1, &t2, &p, &v1, &v2, t, &opts()).unwrap();
        assert!(rep.all_completed());
        assert!(rep.endpoint_mismatch <= 1e-8, "mismatch {}", rep.endpoint_mismatch);
        assert!(rep.holonomy_deviation <= 1e-8, "deviation {}", rep.holonomy_deviation);
    }
}

#[test]
fn parallelogram_negative_control_on_the_sphere() {
    // coordinate splitting of the sphere is not parallel: the identities
    // must fail by a visible margin
    let m = sphere_stereo::<f64>(1.0);
    let d1 = Distribution::constant(DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]), 1);
    let d2 = Distribution::constant(DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 0.0, 1.0]), 1);
    let p = pt(&[0.0, 0.0]);
    let v1 = TangentCurve::constant(p.clone(), vec![0.7, 0.0], 1.0);
    let v2 = TangentCurve::constant(p.clone(), vec![0.0, 0.7], 1.0);
    let rep = parallelogram_check(&m, &d1, &d2, &p, &v1, &v2, 1.0, &opts()).unwrap();
    assert!(
        rep.holonomy_deviation > 1e-3,
        "expected visible deviation, got {}",
        rep.holonomy_deviation
    );
}

// -------------------------------------------------------------------
// curvature splitting
// -------------------------------------------------------------------

fn random_unit_vectors(
    m: &devroll_core::ChartManifold64,
    p: &ChartPoint<f64>,
    rng: &mut ChaCha8Rng,
    count: usize,
) -> Vec<[DVector<f64>; 4]> {
    let g = m.metric_at(p).unwrap();
    let n = m.dim();
    (0..count)
        .map(|_| {
            std::array::from_fn(|_| {
                let v = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
                let norm = (&g * &v).dot(&v).sqrt();
                v / norm
            })
        })
        .collect()
}

#[test]
fn curvature_splits_across_product_factors() {
    let m = product(&sphere_stereo::<f64>(1.0), &hyperbolic_halfplane()).unwrap();
    let (d1, d2) = factor_distributions::<f64>(2, 2);
    let p = pt(&[0.3, -0.1, 0.2, 1.5]);
    let mut rng = ChaCha8Rng::seed_from_u64(97);
    let quads = random_unit_vectors(&m, &p, &mut rng, 50);
    let resid = curvature_split_check(&m, &d1, &d2, &p, &quads).unwrap();
    assert!(resid <= 1e-6, "split residual {resid}");
}

#[test]
fn curvature_split_is_exact_on_flat_manifolds() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);

    let m = euclidean::<f64>(4);
    let (d1, d2) = factor_distributions::<f64>(2, 2);
    let p = pt(&[0.0, 0.0, 0.0, 0.0]);
    let quads = random_unit_vectors(&m, &p, &mut rng, 10);
    assert!(curvature_split_check(&m, &d1, &d2, &p, &quads).unwrap() <= 1e-10);

    let m = slab_torus::<f64>(GOLDEN);
    let (t1, t2) = slab_torus_distributions::<f64>(GOLDEN);
    let p = pt(&[0.5, 0.3, -0.7]);
    let quads = random_unit_vectors(&m, &p, &mut rng, 10);
    assert!(curvature_split_check(&m, &t1, &t2, &p, &quads).unwrap() <= 1e-10);
}

#[test]
fn curvature_is_invariant_under_factor_tangential_transport() {
    let mut rng = ChaCha8Rng::seed_from_u64(59);

    // path along the euclidean factor of sphere × R
    let m = product(&sphere_stereo::<f64>(1.0), &euclidean(1)).unwrap();
    let (d1, d2) = factor_distributions::<f64>(2, 1);
    let p = pt(&[0.3, -0.1, 0.0]);
    let dev = geodesic(&m, &p, vec![0.0, 0.0, 1.0], 1.0, &opts()).unwrap();
    let path = SampledPath::from_development(&dev);
    // quadruples inside the sphere factor
    let g = m.metric_at(&p).unwrap();
    let quads: Vec<[DVector<f64>; 4]> = (0..10)
        .map(|_| {
            std::array::from_fn(|_| {
                let mut v = DVector::zeros(3);
                v[0] = rng.random_range(-1.0..1.0);
                v[1] = rng.random_range(-1.0..1.0);
                let norm = (&g * &v).dot(&v).sqrt();
                v / norm
            })
        })
        .collect();
    let resid =
        curvature_transport_invariance_check(&m, &d1, &d2, &path, &quads, &opts()).unwrap();
    assert!(resid <= 1e-6, "transport invariance residual {resid}");

    // sphere × sphere: move in factor two, quadruples in factor one
    let m = product(&sphere_stereo::<f64>(1.0), &sphere_stereo(1.0)).unwrap();
    let (d1, d2) = factor_distributions::<f64>(2, 2);
    let p = pt(&[0.2, 0.1, 0.0, 0.0]);
    let dev = geodesic(&m, &p, vec![0.0, 0.0, 0.3, 0.1], 1.0, &opts()).unwrap();
    let path = SampledPath::from_development(&dev);
    let g = m.metric_at(&p).unwrap();
    let quads: Vec<[DVector<f64>; 4]> = (0..10)
        .map(|_| {
            std::array::from_fn(|_| {
                let mut v = DVector::zeros(4);
                v[0] = rng.random_range(-1.0..1.0);
                v[1] = rng.random_range(-1.0..1.0);
                let norm = (&g * &v).dot(&v).sqrt();
                v / norm
            })
        })
        .collect();
    let resid =
        curvature_transport_invariance_check(&m, &d1, &d2, &path, &quads, &opts()).unwrap();
    assert!(resid <= 1e-6, "sphere×sphere invariance residual {resid}");

    // flat case: exactly zero
    let st = slab_torus::<f64>(GOLDEN);
    let (t1, t2) = slab_torus_distributions::<f64>(GOLDEN);
    let q = pt(&[0.5, 0.0, 0.0]);
    let norm = (1.0 + GOLDEN * GOLDEN).sqrt();
    let dev = geodesic(
        &st,
        &q,
        vec![0.0, -GOLDEN / norm, 1.0 / norm],
        1.0,
        &opts(),
    )
    .unwrap();
    let path = SampledPath::from_development(&dev);
    let basis = t1.basis_at(&st, &q).unwrap();
    let quads_flat: Vec<[DVector<f64>; 4]> = vec![std::array::from_fn(|k| {
        basis.column(k % basis.ncols()).clone_owned()
    })];
    let resid =
        curvature_transport_invariance_check(&st, &t1, &t2, &path, &quads_flat, &opts())
            .unwrap();
    assert!(resid <= 1e-10, "flat invariance residual {resid}");
}

// -------------------------------------------------------------------
// transfer construction
// -------------------------------------------------------------------

fn sphere_test_curve(p: ChartPoint<f64>) -> TangentCurve<f64> {
    TangentCurve::from_exprs(
        p,
        vec![
            Expr::parse("0.35*cos(t)", 0).unwrap(),
            Expr::parse("0.3*sin(2*t) + 0.1", 0).unwrap(),
        ],
        1.0,
    )
}

#[test]
fn self_transfer_is_the_identity() {
    let m = sphere_stereo::<f64>(1.0);
    let p = pt(&[0.2, -0.1]);
    let gamma = develop(&m, &sphere_test_curve(p.clone()), &opts()).unwrap();
    let phi = LinearIsometry::identity(&p);
    let transfer = cah_transfer(&m, &m, &phi, &gamma, &opts()).unwrap();
    assert!(transfer.status.is_completed());
    assert!((&transfer.endpoint.coords - &gamma.endpoint().x).norm() < 1e-9);
    assert!(
        (&transfer.tau.matrix - DMatrix::identity(2, 2)).amax() < 1e-9,
        "τ = {}",
        transfer.tau.matrix
    );
}

#[test]
fn flat_transfer_commutes_with_rotation() {
    let m = euclidean::<f64>(2);
    let p = pt(&[0.0, 0.0]);
    let theta: f64 = 0.7;
    let rot = DMatrix::from_row_slice(
        2,
        2,
        &[theta.cos(), -theta.sin(), theta.sin(), theta.cos()],
    );
    let phi = LinearIsometry {
        matrix: rot.clone(),
        source: p.clone(),
        target: p.clone(),
    };
    assert!(phi.pullback_residual(&m, &m).unwrap() < 1e-15);
    let gamma = develop(&m, &sphere_test_curve(p), &opts()).unwrap();
    let transfer = cah_transfer(&m, &m, &phi, &gamma, &opts()).unwrap();
    let want = &rot * &gamma.endpoint().x;
    assert!((&transfer.endpoint.coords - &want).norm() < 1e-10);
}

#[test]
fn tau_is_a_linear_isometry_even_without_curvature_matching() {
    // sphere → plane transfer: the map is not isometric, but τ always is
    let sphere = sphere_stereo::<f64>(1.0);
    let plane = euclidean::<f64>(2);
    let p = pt(&[1.0, 0.0]);
    let phi = LinearIsometry::identity(&p); // g agrees at (1,0)
    let gamma = develop(&sphere, &sphere_test_curve(p), &opts()).unwrap();
    let transfer = cah_transfer(&sphere, &plane, &phi, &gamma, &opts()).unwrap();
    let resid = transfer.tau.pullback_residual(&sphere, &plane).unwrap();
    assert!(resid <= 1e-7, "τ pullback residual {resid}");
}

#[test]
fn transfer_is_consistent_with_restart_at_a_junction() {
    let m = sphere_stereo::<f64>(1.0);
    let p = pt(&[0.2, -0.1]);
    let v = sphere_test_curve(p.clone());
    let gamma = develop(&m, &v, &opts()).unwrap();
    let phi = LinearIsometry::identity(&p);
    let full = cah_transfer(&m, &m, &phi, &gamma, &opts()).unwrap();

    let t0 = 0.5;
    let gamma_a = develop(&m, &v.truncated(t0), &opts()).unwrap();
    let first = cah_transfer(&m, &m, &phi, &gamma_a, &opts()).unwrap();
    let gamma_b = restart(&m, &gamma, t0, &v.tail(t0), &opts()).unwrap();
    let phi_mid = LinearIsometry {
        matrix: first.tau.matrix.clone(),
        source: first.tau.source.clone(),
        target: first.tau.target.clone(),
    };
    let second = cah_transfer(&m, &m, &phi_mid, &gamma_b, &opts()).unwrap();
    let diff = (&second.endpoint.coords - &full.endpoint.coords).norm();
    assert!(diff < 1e-8, "restarted transfer differs by {diff}");
}

fn great_circle_homotopy(m: &devroll_core::ChartManifold64) -> VariationFamily<f64> {
    VariationFamily::new(
        m,
        pt(&[1.0, 0.0]),
        vec![
            Expr::parse_named("-sin(0.3 + 0.4*u)", &["u"]).unwrap(),
            Expr::parse_named("cos(0.3 + 0.4*u)", &["u"]).unwrap(),
        ],
        DMatrix::identity(2, 2),
        std::f64::consts::PI,
    )
    .unwrap()
}

#[test]
fn transfer_well_defined_between_isometric_spheres() {
    let m = sphere_stereo::<f64>(1.0);
    let fam = great_circle_homotopy(&m);
    let phi = LinearIsometry::identity(&pt(&[1.0, 0.0]));
    let report = cah_welldefined_check(&m, &m, &phi, &fam, 9, &opts()).unwrap();
    assert!(report.spread <= 1e-5, "spread {}", report.spread);
}

#[test]
fn transfer_not_well_defined_into_the_plane() {
    // curvature hypothesis violated: the same homotopy transferred into
    // flat space sweeps its endpoints apart
    let sphere = sphere_stereo::<f64>(1.0);
    let plane = euclidean::<f64>(2);
    let fam = great_circle_homotopy(&sphere);
    let phi = LinearIsometry::identity(&pt(&[1.0, 0.0]));
    let report = cah_welldefined_check(&sphere, &plane, &phi, &fam, 9, &opts()).unwrap();
    assert!(report.spread > 1e-2, "spread {}", report.spread);
}

#[test]
fn flat_to_flat_transfer_is_well_defined() {
    let m = euclidean::<f64>(2);
    // endpoint-fixed family of plane curves: v(u,t) chosen so that the
    // time integral is independent of u
    let fam = VariationFamily::new(
        &m,
        pt(&[0.0, 0.0]),
        vec![
            Expr::parse_named("1 + u*cos(6.283185307179586*t)", &["u"]).unwrap(),
            Expr::parse_named("u*sin(6.283185307179586*t)", &["u"]).unwrap(),
        ],
        DMatrix::identity(2, 2),
        1.0,
    )
    .unwrap();
    let phi = LinearIsometry::identity(&pt(&[0.0, 0.0]));
    let report = cah_welldefined_check(&m, &m, &phi, &fam, 7, &opts()).unwrap();
    assert!(report.spread <= 1e-10, "spread {}", report.spread);
}

// -------------------------------------------------------------------
// local product isometry
// -------------------------------------------------------------------

#[test]
fn derham_sampling_on_flat_product_is_the_chart_map() {
    let m = product(&euclidean::<f64>(1), &euclidean(1)).unwrap();
    let (d1, d2) = factor_distributions::<f64>(1, 1);
    let p = pt(&[0.0, 0.0]);
    let report = derham_local_isometry(
        &m,
        &d1,
        &d2,
        &p,
        &[DVector::from_vec(vec![1.0, 0.0])],
        &[DVector::from_vec(vec![0.0, 1.0])],
        0.5,
        11,
        1e-7,
        &opts(),
    )
    .unwrap();
    assert_eq!(report.invalid_cells, 0);
    assert!(report.pullback_residual <= 1e-9, "residual {}", report.pullback_residual);
    assert!(report.order_mismatch <= 1e-9);
}

#[test]
fn derham_sampling_on_sphere_times_line() {
    let m = product(&sphere_stereo::<f64>(1.0), &euclidean(1)).unwrap();
    let (d1, d2) = factor_distributions::<f64>(2, 1);
    let p = pt(&[0.0, 0.0, 0.0]);
    // unit g-norm axes: the sphere factor has g = 4·I at the origin
    let report = derham_local_isometry(
        &m,
        &d1,
        &d2,
        &p,
        &[DVector::from_vec(vec![0.5, 0.0, 0.0])],
        &[DVector::from_vec(vec![0.0, 0.0, 1.0])],
        0.5,
        11,
        1e-7,
        &opts(),
    )
    .unwrap();
    assert_eq!(report.invalid_cells, 0);
    assert!(report.pullback_residual <= 1e-4, "residual {}", report.pullback_residual);
    assert!(report.order_mismatch <= 1e-8, "orders {}", report.order_mismatch);
}

#[test]
fn derham_sampling_on_the_slab_torus() {
    let r = GOLDEN;
    let m = slab_torus::<f64>(r);
    let (t1, t2) = slab_torus_distributions::<f64>(r);
    let p = pt(&[0.5, 0.0, 0.0]);
    let norm = (1.0 + r * r).sqrt();
    let report = derham_local_isometry(
        &m,
        &t1,
        &t2,
        &p,
        &[
            DVector::from_vec(vec![1.0, 0.0, 0.0]),
            DVector::from_vec(vec![0.0, 1.0 / norm, r / norm]),
        ],
        &[DVector::from_vec(vec![0.0, -r / norm, 1.0 / norm])],
        0.4,
        7,
        1e-7,
        &opts(),
    )
    .unwrap();
    assert_eq!(report.invalid_cells, 0);
    assert!(report.pullback_residual <= 1e-6, "residual {}", report.pullback_residual);
    assert!(report.order_mismatch <= 1e-8, "orders {}", report.order_mismatch);
}

// -------------------------------------------------------------------
// leaf tracing
// -------------------------------------------------------------------

#[test]
fn irrational_leaf_never_closes_but_fills_the_torus() {
    let r = GOLDEN;
    let m = slab_torus::<f64>(r);
    let (_, t2) = slab_torus_distributions::<f64>(r);
    let norm = (1.0 + r * r).sqrt();
    let steering = TangentCurve::constant(
        pt(&[0.5, 0.0, 0.0]),
        vec![0.0, -r / norm, 1.0 / norm],
        200.0,
    );
    let rec = RecurrenceOpts::default();
    let trace = leaf_trace(&m, &t2, &steering, &rec, &opts()).unwrap();
    assert!(trace.dev.status.is_completed());
    assert!(trace.tangency_residual <= 1e-7);

    let min_return = trace.min_return_distance.unwrap();
    let oracle = devroll_testkit::line_min_return_distance(r, rec.t_min, 200.0);
    assert!(min_return > 1e-3, "leaf closed: min return {min_return}");
    // the sampled minimum brackets the exact continuous one
    assert!(min_return >= oracle - 1e-12, "{min_return} vs oracle {oracle}");
    assert!(min_return <= oracle + 1e-3, "{min_return} vs oracle {oracle}");

    let coverage = trace.coverage_fraction.unwrap();
    assert!(coverage >= 0.95, "coverage {coverage}");
}

#[test]
fn rational_leaf_closes_at_the_lattice_period() {
    let r = 0.5;
    let m = slab_torus::<f64>(r);
    let (_, t2) = slab_torus_distributions::<f64>(r);
    let norm = (1.0 + r * r).sqrt();
    let steering = TangentCurve::constant(
        pt(&[0.5, 0.0, 0.0]),
        vec![0.0, -r / norm, 1.0 / norm],
        3.0,
    );
    let rec = RecurrenceOpts {
        t_min: 0.5,
        ..RecurrenceOpts::default()
    };
    let trace = leaf_trace(&m, &t2, &steering, &rec, &opts()).unwrap();
    let min_return = trace.min_return_distance.unwrap();
    assert!(min_return <= 1e-6, "rational orbit did not close: {min_return}");
    let period = devroll_testkit::rational_line_period(1, 2);
    assert!(
        (trace.min_return_time.unwrap() - period).abs() < 1e-3,
        "closed at {} expected {}",
        trace.min_return_time.unwrap(),
        period
    );
}

#[test]
fn axis_aligned_leaf_closes_with_period_one() {
    let m = slab_torus::<f64>(0.0);
    let (_, t2) = slab_torus_distributions::<f64>(0.0);
    let steering = TangentCurve::constant(pt(&[0.5, 0.0, 0.0]), vec![0.0, 0.0, 1.0], 1.5);
    let trace = leaf_trace(&m, &t2, &steering, &RecurrenceOpts::default(), &opts()).unwrap();
    assert!(trace.min_return_distance.unwrap() <= 1e-9);
    assert!((trace.min_return_time.unwrap() - 1.0).abs() < 1e-6);
}

#[test]
fn normal_distribution_leaf_hits_the_boundary() {
    // steering in T1 along the slab axis leaves the interior: only the
    // boundary-orthogonal distribution keeps developments interior
    let r = GOLDEN;
    let m = slab_torus::<f64>(r);
    let (t1, _) = slab_torus_distributions::<f64>(r);
    let steering = TangentCurve::constant(pt(&[0.5, 0.0, 0.0]), vec![1.0, 0.0, 0.0], 1.0);
    let trace = leaf_trace(&m, &t1, &steering, &RecurrenceOpts::default(), &opts()).unwrap();
    match trace.dev.status {
        devroll_core::DevelopmentStatus::HitBoundary(t_star) => {
            assert!((t_star - 0.5).abs() < 1e-9);
        }
        other => panic!("expected boundary hit, got {other:?}"),
    }
}
