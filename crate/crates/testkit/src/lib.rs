//! Independent oracles for the test suites.
//!
//! Everything here deliberately avoids the development solver: geodesics
//! are integrated from the second-order geodesic equation, transports
//! ride along that integration, and the closed forms are hand-derived.
//! Shared ground with the engine is limited to the Christoffel symbols,
//! which the manifold tests pin against hand computations separately.

use devroll_core::manifold::ChartManifold;
use nalgebra::DVector;

/// Least-squares slope of y against x.
pub fn fit_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let sx: f64 = xs.iter().sum();
    let sy: f64 = ys.iter().sum();
    let sxx: f64 = xs.iter().map(|x| x * x).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| x * y).sum();
    (n * sxy - sx * sy) / (n * sxx - sx * sx)
}

/// Central-difference gradient with step `h`.
pub fn central_grad(f: impl Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    (0..x.len())
        .map(|i| {
            let mut hi = x.to_vec();
            let mut lo = x.to_vec();
            hi[i] += h;
            lo[i] -= h;
            (f(&hi) - f(&lo)) / (2.0 * h)
        })
        .collect()
}

/// End state of the dedicated geodesic-equation integration: position,
/// velocity, and the vectors carried by the transport ODE.
pub struct GeodesicOracle {
    pub x: DVector<f64>,
    pub velocity: DVector<f64>,
    pub carried: Vec<DVector<f64>>,
    /// (t, position) samples of the trajectory.
    pub trajectory: Vec<(f64, DVector<f64>)>,
}

/// Integrates x'' = −Γ(x)(x', x') with plain RK4, carrying extra vectors
/// by the first-order parallel-transport equation along the way. This is
/// the independent reference for developments of constant curves.
pub fn geodesic_oracle(
    m: &ChartManifold<f64>,
    x0: &[f64],
    v0: &[f64],
    carried0: &[DVector<f64>],
    t_end: f64,
    h: f64,
) -> GeodesicOracle {
    let n = x0.len();
    let k = carried0.len();
    // state: [x | w | carried...]
    let mut y = DVector::zeros(n * (2 + k));
    for i in 0..n {
        y[i] = x0[i];
        y[n + i] = v0[i];
    }
    for (c, vec) in carried0.iter().enumerate() {
        for i in 0..n {
            y[2 * n + c * n + i] = vec[i];
        }
    }

    let rhs = |y: &DVector<f64>| -> DVector<f64> {
        let x: Vec<f64> = (0..n).map(|i| y[i]).collect();
        let p = devroll_core::ChartPoint { coords: DVector::from_vec(x) };
        let gamma = m.christoffel(&p).expect("oracle stays in-chart");
        let mut dy = DVector::zeros(y.len());
        for i in 0..n {
            dy[i] = y[n + i];
        }
        // acceleration
        for j in 0..n {
            let mut acc = 0.0;
            for a in 0..n {
                for b in 0..n {
                    acc += gamma[j][(a, b)] * y[n + a] * y[n + b];
                }
            }
            dy[n + j] = -acc;
        }
        // carried vectors
        for c in 0..k {
            for j in 0..n {
                let mut acc = 0.0;
                for a in 0..n {
                    for b in 0..n {
                        acc += gamma[j][(a, b)] * y[2 * n + c * n + a] * y[n + b];
                    }
                }
                dy[2 * n + c * n + j] = -acc;
            }
        }
        dy
    };

    let steps = (t_end / h).ceil().max(1.0) as usize;
    let hh = t_end / steps as f64;
    let mut trajectory = Vec::with_capacity(steps + 1);
    trajectory.push((0.0, DVector::from_fn(n, |i, _| y[i])));
    for s in 0..steps {
        let k1 = rhs(&y);
        let k2 = rhs(&(&y + &k1 * (hh / 2.0)));
        let k3 = rhs(&(&y + &k2 * (hh / 2.0)));
        let k4 = rhs(&(&y + &k3 * hh));
        y += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (hh / 6.0);
        trajectory.push(((s + 1) as f64 * hh, DVector::from_fn(n, |i, _| y[i])));
    }

    GeodesicOracle {
        x: DVector::from_fn(n, |i, _| y[i]),
        velocity: DVector::from_fn(n, |i, _| y[n + i]),
        carried: (0..k)
            .map(|c| DVector::from_fn(n, |i, _| y[2 * n + c * n + i]))
            .collect(),
        trajectory,
    }
}

/// Closed-form unit-speed geodesic of the hyperbolic half-plane starting
/// at (0,1) with direction (1,0): the unit semicircle (tanh t, sech t).
pub fn hyperbolic_geodesic_from_i(t: f64) -> (f64, f64) {
    (t.tanh(), 1.0 / t.cosh())
}

/// Hand-derived Christoffel symbols of the half-plane metric δ/y²:
/// returns Γ^j_{kl} at (x, y) as gamma[j][k][l].
pub fn hyperbolic_christoffel(_x: f64, y: f64) -> [[[f64; 2]; 2]; 2] {
    let inv = 1.0 / y;
    let mut g = [[[0.0; 2]; 2]; 2];
    g[0][0][1] = -inv;
    g[0][1][0] = -inv;
    g[1][0][0] = inv;
    g[1][1][1] = -inv;
    g
}

/// Closed-form unit-speed geodesic of the unit sphere (stereographic
/// chart) starting at the equator point (1,0) with direction (0,1): the
/// unit circle traversed at angle t.
pub fn sphere_equator_geodesic(t: f64) -> (f64, f64) {
    (t.cos(), t.sin())
}

/// Antipodal map of the unit sphere in its stereographic chart.
pub fn stereo_antipode(x: &[f64; 2]) -> [f64; 2] {
    let n2 = x[0] * x[0] + x[1] * x[1];
    [-x[0] / n2, -x[1] / n2]
}

/// Exact minimum torus distance of the line {s·(−r,1)/√(1+r²) : s ∈
/// [s_min, s_max]} (mod 1) from the origin, by enumerating lattice
/// translates: the closest-approach oracle for leaf recurrence.
pub fn line_min_return_distance(r: f64, s_min: f64, s_max: f64) -> f64 {
    let norm = (1.0 + r * r).sqrt();
    let d = [-r / norm, 1.0 / norm];
    let reach = s_max.ceil() as i64 + 2;
    let mut best = f64::INFINITY;
    for m1 in -reach..=reach {
        for m2 in -reach..=reach {
            if m1 == 0 && m2 == 0 {
                continue;
            }
            let (q1, q2) = (m1 as f64, m2 as f64);
            // projection of the lattice point onto the line direction
            let s = q1 * d[0] + q2 * d[1];
            let dist = if s >= s_min && s <= s_max {
                (q1 * d[1] - q2 * d[0]).abs()
            } else {
                let s_clamped = s.clamp(s_min, s_max);
                let dx = q1 - s_clamped * d[0];
                let dy = q2 - s_clamped * d[1];
                (dx * dx + dy * dy).sqrt()
            };
            best = best.min(dist);
        }
    }
    best
}

/// First s > 0 at which the slope-r line re-hits the origin on the
/// torus exactly, for rational r = p/q in lowest terms: the closed-orbit
/// period in arclength units.
pub fn rational_line_period(p: i64, q: i64) -> f64 {
    // direction (−p/q, 1)/norm; displacement after arclength s is
    // s/norm · (−p/q, 1); integer hit at s = norm · q
    let r = p as f64 / q as f64;
    let norm = (1.0 + r * r).sqrt();
    norm * q as f64
}

/// One interior-staying test curve of horizon 5 per catalog manifold.
pub fn catalog_long_curves() -> Vec<(ChartManifold<f64>, devroll_core::TangentCurve64)> {
    use devroll_core::manifold::{
        euclidean, flat_torus, hyperbolic_halfplane, slab, slab_torus, sphere_stereo,
    };
    use devroll_core::{ChartPoint, Expr, TangentCurve};
    let horizon = 5.0;
    let curve = |base: &[f64], srcs: &[&str]| {
        TangentCurve::from_exprs(
            ChartPoint::new(base.to_vec()),
            srcs.iter().map(|s| Expr::parse(s, 0).unwrap()).collect(),
            horizon,
        )
    };
    vec![
        (euclidean(2), curve(&[0.0, 0.0], &["0.5*cos(t)", "0.5*sin(t)"])),
        (
            sphere_stereo(1.0),
            curve(&[0.0, 0.0], &["0.3*cos(t)", "0.3*sin(t)"]),
        ),
        (
            hyperbolic_halfplane(),
            curve(&[0.0, 1.0], &["0.2*cos(t)", "0.2*sin(t)"]),
        ),
        (flat_torus(2), curve(&[0.0, 0.0], &["1", "0.5"])),
        (slab(1.0), curve(&[0.5], &["0.3*cos(2*t)"])),
        (
            slab_torus(0.618),
            curve(&[0.5, 0.0, 0.0], &["0.2*cos(2*t)", "0.7", "0.7"]),
        ),
    ]
}

/// The three geodesic legs of the octant triangle on the unit sphere in
/// its stereographic chart: origin → (1,0) → (0,1) → origin, all three
/// angles right; the loop's holonomy is a quarter turn.
pub fn octant_triangle_legs() -> Vec<devroll_core::SampledPath<f64>> {
    use devroll_core::manifold::sphere_stereo;
    use devroll_core::transport::geodesic;
    use devroll_core::{ChartPoint, IntegratorOpts, SampledPath};
    let m = sphere_stereo::<f64>(1.0);
    let opts = IntegratorOpts::default();
    let quarter = std::f64::consts::FRAC_PI_2;
    [
        (vec![0.0, 0.0], vec![0.5, 0.0]),
        (vec![1.0, 0.0], vec![0.0, 1.0]),
        (vec![0.0, 1.0], vec![0.0, -1.0]),
    ]
    .into_iter()
    .map(|(p, v)| {
        let dev = geodesic(&m, &ChartPoint::new(p), v, quarter, &opts).unwrap();
        assert!(dev.status.is_completed());
        SampledPath::from_development(&dev)
    })
    .collect()
}

/// Deterministic generator of domain-safe random expression sources over
/// `x0..x{n_vars-1}` and `t`, for parser/AD sweeps. The grammar guards
/// every partial operation (no bare log, sqrt, or division).
pub struct ExprGen {
    state: u64,
    n_vars: usize,
}

impl ExprGen {
    pub fn new(seed: u64, n_vars: usize) -> Self {
        ExprGen {
            state: seed.wrapping_mul(0x9E3779B97F4A7C15).wrapping_add(1),
            n_vars,
        }
    }

    fn next(&mut self) -> u64 {
        // xorshift64*
        let mut x = self.state;
        x ^= x >> 12;
        x ^= x << 25;
        x ^= x >> 27;
        self.state = x;
        x.wrapping_mul(0x2545F4914F6CDD1D)
    }

    fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        let u = (self.next() >> 11) as f64 / (1u64 << 53) as f64;
        lo + u * (hi - lo)
    }

    pub fn source(&mut self, depth: usize) -> String {
        if depth == 0 {
            return match self.next() % 3 {
                0 => format!("x{}", self.next() as usize % self.n_vars),
                1 => "t".to_string(),
                _ => format!("{:.3}", self.uniform(0.1, 2.0)),
            };
        }
        let a = self.source(depth - 1);
        let b = self.source(depth - 1);
        match self.next() % 10 {
            0 => format!("({a}) + ({b})"),
            1 => format!("({a}) - ({b})"),
            2 => format!("({a})*({b})"),
            3 => format!("-({a})"),
            4 => format!("sin({a})"),
            5 => format!("cos({a})"),
            6 => format!("tanh({a})"),
            7 => format!("atan({a})"),
            // guarded partial operations
            8 => format!("sqrt(1 + ({a})^2)"),
            _ => format!("({a})/(2 + tanh({b})^2 + ({b})^2)"),
        }
    }
}
