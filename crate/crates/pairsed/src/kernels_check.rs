//! Identity suite for the Stokes kernels and the pair matrices.

use pairsed_core::kernels::{oseen_gradient, oseen_hessian, oseen_pressure, oseen_tensor};
use pairsed_core::metrics::fit_slope;
use pairsed_core::pair::{mobility_pair, resistance_pair, settling_matrix};
use pairsed_core::{Mat3, Vec3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

#[derive(Clone, Debug, Serialize, PartialEq)]
pub struct Check {
    pub name: String,
    /// Worst measured deviation, or the fitted slope for rate checks.
    pub value: f64,
    pub target: f64,
    pub tolerance: f64,
    pub passed: bool,
}

impl Check {
    fn below(name: &str, value: f64, tolerance: f64) -> Check {
        Check {
            name: name.into(),
            value,
            target: 0.0,
            tolerance,
            passed: value <= tolerance,
        }
    }

    fn near(name: &str, value: f64, target: f64, tolerance: f64) -> Check {
        Check {
            name: name.into(),
            value,
            target,
            tolerance,
            passed: (value - target).abs() <= tolerance,
        }
    }
}

pub fn random_rotation(rng: &mut impl Rng) -> Mat3 {
    let q = loop {
        let q: [f64; 4] = std::array::from_fn(|_| rng.random_range(-1.0..1.0));
        let n2: f64 = q.iter().map(|v| v * v).sum();
        if n2 > 1e-4 && n2 <= 1.0 {
            let n = n2.sqrt();
            break q.map(|v| v / n);
        }
    };
    let [w, x, y, z] = q;
    Mat3([
        [1.0 - 2.0 * (y * y + z * z), 2.0 * (x * y - w * z), 2.0 * (x * z + w * y)],
        [2.0 * (x * y + w * z), 1.0 - 2.0 * (x * x + z * z), 2.0 * (y * z - w * x)],
        [2.0 * (x * z - w * y), 2.0 * (y * z + w * x), 1.0 - 2.0 * (x * x + y * y)],
    ])
}

/// Uniform direction times a length drawn from `[lo, hi]`.
pub fn random_vector(rng: &mut impl Rng, lo: f64, hi: f64) -> Vec3 {
    let dir = loop {
        let v = Vec3(std::array::from_fn(|_| rng.random_range(-1.0..1.0)));
        let n = v.norm();
        if n > 1e-3 && n <= 1.0 {
            break v * (1.0 / n);
        }
    };
    dir * rng.random_range(lo..=hi)
}

fn rel(a: Mat3, b: Mat3) -> f64 {
    (a - b).max_abs() / b.max_abs().max(f64::MIN_POSITIVE)
}

/// `-Lap Phi_ij + d_i P_j` from the analytic hessian and pressure gradient.
fn stokes_residual_analytic(x: Vec3) -> f64 {
    let h = oseen_hessian(x).expect("nonzero");
    let r = x.norm();
    let mut worst = 0.0f64;
    for i in 0..3 {
        for j in 0..3 {
            let lap: f64 = (0..3).map(|k| h[i][j][k][k]).sum();
            let dp = (if i == j { 1.0 } else { 0.0 } / (r * r * r) - 3.0 * x[i] * x[j] / r.powi(5))
                / (4.0 * std::f64::consts::PI);
            worst = worst.max((-lap + dp).abs());
        }
    }
    worst / (1.0 / (8.0 * std::f64::consts::PI * r * r * r))
}

/// Same residual from central differences of `Phi` and `P` with step `h`.
pub fn stokes_residual_fd(x: Vec3, h: f64) -> f64 {
    let e = |k: usize| {
        let mut v = Vec3::ZERO;
        v[k] = h;
        v
    };
    let phi = |y: Vec3| oseen_tensor(y).expect("nonzero");
    let p = |y: Vec3| oseen_pressure(y).expect("nonzero");
    let mut lap = phi(x).scale(-6.0);
    for k in 0..3 {
        lap = lap + phi(x + e(k)) + phi(x - e(k));
    }
    let lap = lap.scale(1.0 / (h * h));
    let mut worst = 0.0f64;
    let mut div = 0.0f64;
    for i in 0..3 {
        let dp = (p(x + e(i)) - p(x - e(i))) * (0.5 / h);
        for j in 0..3 {
            worst = worst.max((-lap.0[i][j] + dp[j]).abs());
        }
        let d: f64 = (0..3)
            .map(|k| (phi(x + e(k)).0[i][k] - phi(x - e(k)).0[i][k]) * (0.5 / h))
            .sum();
        div = div.max(d.abs());
    }
    worst.max(div)
}

/// Runs every identity; deterministic for a given seed.
pub fn run_suite(seed: u64) -> Vec<Check> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut checks = Vec::new();

    let (mut sym, mut hom, mut equi, mut div, mut stokes) = (0.0f64, 0.0f64, 0.0f64, 0.0f64, 0.0f64);
    for _ in 0..200 {
        let x = random_vector(&mut rng, 0.05, 20.0);
        let phi = oseen_tensor(x).unwrap();
        sym = sym.max(rel(phi.transpose(), phi)).max(rel(oseen_tensor(-x).unwrap(), phi));
        let lam = rng.random_range(0.1..10.0);
        hom = hom.max(rel(oseen_tensor(x * lam).unwrap().scale(lam), phi));
        let q = random_rotation(&mut rng);
        equi = equi.max(rel(oseen_tensor(q * x).unwrap(), q * phi * q.transpose()));
        let g = oseen_gradient(x).unwrap();
        let scale = 1.0 / (8.0 * std::f64::consts::PI * x.norm_sq());
        for gi in &g {
            let d: f64 = (0..3).map(|k| gi[k][k]).sum();
            div = div.max(d.abs() / scale);
        }
        stokes = stokes.max(stokes_residual_analytic(x));
    }
    checks.push(Check::below("oseen_symmetry", sym, 1e-10));
    checks.push(Check::below("oseen_homogeneity", hom, 1e-10));
    checks.push(Check::below("oseen_rotation_equivariance", equi, 1e-10));
    checks.push(Check::below("oseen_divergence_free", div, 1e-10));
    checks.push(Check::below("stokes_identity_analytic", stokes, 1e-10));

    let x = Vec3::new(0.6, -0.45, 0.8);
    let hs = [0.08, 0.04, 0.02, 0.01];
    let res: Vec<f64> = hs.iter().map(|h| stokes_residual_fd(x, *h)).collect();
    let slope = fit_slope(&hs, &res).map(|f| f.slope).unwrap_or(f64::NAN);
    checks.push(Check::near("stokes_fd_residual_order", slope, 2.0, 0.1));

    let (mut inv1, mut inv2, mut frame) = (0.0f64, 0.0f64, 0.0f64);
    for _ in 0..1000 {
        let xi = random_vector(&mut rng, 1.0 + 1e-9, 50.0);
        let m = mobility_pair(xi).unwrap();
        let r = resistance_pair(xi).unwrap();
        let (a1, a2) = (m.a1.matrix(), m.a2.matrix());
        let (b1, b2) = (r.a1.matrix(), r.a2.matrix());
        inv1 = inv1.max(((b1 + b2) * (a1 + a2) - Mat3::IDENTITY).max_abs());
        inv2 = inv2.max((b1 * a2 + b2 * a1).max_abs());
        let q = random_rotation(&mut rng);
        let mq = mobility_pair(q * xi).unwrap();
        let rq = resistance_pair(q * xi).unwrap();
        let conj = |a: Mat3| q * a * q.transpose();
        frame = frame
            .max((mq.a2.matrix() - conj(a2)).max_abs())
            .max((rq.a1.matrix() - conj(b1)).max_abs())
            .max((rq.a2.matrix() - conj(b2)).max_abs());
    }
    checks.push(Check::below("pair_inversion_sum", inv1, 1e-12));
    checks.push(Check::below("pair_inversion_cross", inv2, 1e-12));
    checks.push(Check::below("pair_frame_equivariance", frame, 1e-12));

    let down = Vec3::new(0.0, 0.0, -1.0);
    let factor = |xi: Vec3| (settling_matrix(xi).unwrap() * down).norm();
    let mut ordered = true;
    for n in [1.5, 2.0, 4.0, 8.0] {
        let v = factor(Vec3::new(0.0, 0.0, n));
        let h = factor(Vec3::new(n, 0.0, 0.0));
        ordered &= v > h && h > 1.0;
    }
    checks.push(Check {
        name: "settling_anisotropy_order".into(),
        value: if ordered { 1.0 } else { 0.0 },
        target: 1.0,
        tolerance: 0.0,
        passed: ordered,
    });
    checks.push(Check::near(
        "settling_vertical_xi2",
        factor(Vec3::new(0.0, 0.0, 2.0)),
        1.375,
        1e-12,
    ));
    checks.push(Check::near(
        "settling_horizontal_xi2",
        factor(Vec3::new(2.0, 0.0, 0.0)),
        1.1875,
        1e-12,
    ));
    checks
}
