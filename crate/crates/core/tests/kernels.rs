mod common;

use common::*;
use pairsed_core::kernels::*;
use pairsed_core::linalg::contract_middle;
use pairsed_core::{Mat3, Vec3};
use proptest::prelude::*;
use std::f64::consts::PI;

fn fd_gradient(f: impl Fn(Vec3) -> Mat3, x: Vec3, h: f64) -> [[[f64; 3]; 3]; 3] {
    let mut t = [[[0.0; 3]; 3]; 3];
    for k in 0..3 {
        let mut e = Vec3::ZERO;
        e[k] = h;
        let d = (f(x + e) - f(x - e)).scale(0.5 / h);
        for i in 0..3 {
            for j in 0..3 {
                t[i][j][k] = d.0[i][j];
            }
        }
    }
    t
}

fn max_diff3(a: &[[[f64; 3]; 3]; 3], b: &[[[f64; 3]; 3]; 3]) -> f64 {
    let mut m = 0.0f64;
    for i in 0..3 {
        for j in 0..3 {
            for k in 0..3 {
                m = m.max((a[i][j][k] - b[i][j][k]).abs());
            }
        }
    }
    m
}

#[test]
fn oseen_closed_form_on_axes() {
    let phi = oseen_tensor(Vec3::new(0.0, 0.0, 2.0)).unwrap();
    let c = 1.0 / (8.0 * PI * 2.0);
    assert!((phi.0[2][2] - 2.0 * c).abs() < 1e-16);
    assert!((phi.0[0][0] - c).abs() < 1e-16);
    assert_eq!(phi.0[0][2], 0.0);
    let p = oseen_pressure(Vec3::new(0.0, 2.0, 0.0)).unwrap();
    assert!((p[1] - 1.0 / (4.0 * PI * 4.0)).abs() < 1e-16);
}

#[test]
fn singular_argument_errors() {
    assert!(oseen_tensor(Vec3::ZERO).is_err());
    assert!(oseen_gradient(Vec3::ZERO).is_err());
    assert!(oseen_tensor(Vec3::new(f64::NAN, 0.0, 1.0)).is_err());
    assert!(oseen_derivative(Vec3::new(1.0, 0.0, 0.0), 3).is_err());
}

proptest! {
    #[test]
    fn oseen_symmetric_even_homogeneous(x in shell(1e-2, 1e2), lam in 0.05f64..20.0) {
        let phi = oseen_tensor(x).unwrap();
        prop_assert!(rel(phi.transpose(), phi) < 1e-14);
        prop_assert!(rel(oseen_tensor(-x).unwrap(), phi) < 1e-14);
        prop_assert!(rel(oseen_tensor(x * lam).unwrap().scale(lam), phi) < 1e-13);
    }

    #[test]
    fn oseen_rotation_equivariant(x in shell(1e-2, 1e2), q in rot()) {
        let lhs = oseen_tensor(q * x).unwrap();
        let rhs = q * oseen_tensor(x).unwrap() * q.transpose();
        prop_assert!(rel(lhs, rhs) < 1e-12);
        let p = oseen_pressure(q * x).unwrap() - q * oseen_pressure(x).unwrap();
        prop_assert!(p.max_abs() < 1e-12 * oseen_pressure(x).unwrap().max_abs());
    }

    #[test]
    fn gradient_matches_central_differences(x in shell(0.5, 3.0)) {
        let h = 1e-5;
        let fd = fd_gradient(|y| oseen_tensor(y).unwrap(), x, h);
        let an = oseen_gradient(x).unwrap();
        prop_assert!(max_diff3(&an, &fd) < 1e-8);
    }

    #[test]
    fn hessian_matches_differences_of_gradient(x in shell(0.5, 3.0)) {
        let h = 1e-5;
        let hs = oseen_hessian(x).unwrap();
        for l in 0..3 {
            let mut e = Vec3::ZERO;
            e[l] = h;
            let gp = oseen_gradient(x + e).unwrap();
            let gm = oseen_gradient(x - e).unwrap();
            for i in 0..3 {
                for j in 0..3 {
                    for k in 0..3 {
                        let fd = (gp[i][j][k] - gm[i][j][k]) / (2.0 * h);
                        prop_assert!((hs[i][j][k][l] - fd).abs() < 1e-7);
                    }
                }
            }
        }
    }

    #[test]
    fn divergence_free_and_stokes_balance(x in shell(0.1, 10.0)) {
        let g = oseen_gradient(x).unwrap();
        let h = oseen_hessian(x).unwrap();
        let r = x.norm();
        let scale = 1.0 / (8.0 * PI * r * r * r);
        for i in 0..3 {
            let div: f64 = (0..3).map(|k| g[i][k][k]).sum();
            prop_assert!(div.abs() < 1e-12 * scale * r);
            for j in 0..3 {
                let lap: f64 = (0..3).map(|k| h[i][j][k][k]).sum();
                // d_i of the pressure component x_j / (4 pi r^3).
                let dp = ((i == j) as u8 as f64 / (r * r * r) - 3.0 * x[i] * x[j] / r.powi(5))
                    / (4.0 * PI);
                prop_assert!((lap - dp).abs() < 1e-12 * scale);
            }
        }
    }

    #[test]
    fn blob_approaches_oseen_quadratically(x in shell(1.0, 4.0)) {
        let phi = oseen_tensor(x).unwrap();
        let e1 = (oseen_blob(x, 1e-2) - phi).max_abs();
        let e2 = (oseen_blob(x, 5e-3) - phi).max_abs();
        prop_assert!(e1 < 1e-4);
        let ratio = e1 / e2;
        prop_assert!((ratio - 4.0).abs() < 0.1, "ratio {ratio}");
    }

    #[test]
    fn blob_gradient_matches_differences(x in shell(0.0, 2.0), delta in 0.05f64..0.5) {
        let fd = fd_gradient(|y| oseen_blob(y, delta), x, 1e-5);
        let an = oseen_blob_gradient(x, delta);
        prop_assert!(max_diff3(&an, &fd) < 1e-6 / delta);
    }

    #[test]
    fn truncation_regions(x in shell(1e-3, 3.0), d in 0.1f64..1.0) {
        let c = CutoffSpec::default();
        let t = truncated_oseen(x, d, &c).unwrap();
        let r = x.norm() / d;
        if r <= c.inner {
            prop_assert_eq!(t, Mat3::ZERO);
        } else if r >= c.outer {
            prop_assert_eq!(t, oseen_tensor(x).unwrap());
        } else {
            let chi = c.chi(r);
            prop_assert!(chi > 0.0 && chi < 1.0);
            prop_assert!(rel(t, oseen_tensor(x).unwrap().scale(chi)) < 1e-14);
        }
    }

    #[test]
    fn truncated_gradient_matches_differences(x in shell(0.05, 0.6)) {
        let c = CutoffSpec::default();
        let d = 0.5;
        let fd = fd_gradient(|y| truncated_oseen(y, d, &c).unwrap(), x, 1e-6);
        let an = truncated_oseen_gradient(x, d, &c).unwrap();
        prop_assert!(max_diff3(&an, &fd) < 1e-5);
    }
}

#[test]
fn cutoff_is_smooth_step() {
    let c = CutoffSpec::new(0.25, 0.5).unwrap();
    assert_eq!(c.chi(0.2), 0.0);
    assert_eq!(c.chi(0.6), 1.0);
    assert!((c.chi(0.375) - 0.5).abs() < 1e-15);
    assert_eq!(c.chi_prime(0.25), 0.0);
    assert_eq!(c.chi_prime(0.5), 0.0);
    assert!(CutoffSpec::new(0.5, 0.25).is_err());
}

#[test]
fn gradient_contracted_with_force() {
    let x = Vec3::new(0.3, -0.7, 1.1);
    let f = Vec3::new(0.0, 0.0, -1.0);
    let g = contract_middle(&oseen_gradient(x).unwrap(), f);
    let h = 1e-6;
    for k in 0..3 {
        let mut e = Vec3::ZERO;
        e[k] = h;
        let fd = (oseen_tensor(x + e).unwrap() * f - oseen_tensor(x - e).unwrap() * f) * (0.5 / h);
        for i in 0..3 {
            assert!((g.0[i][k] - fd[i]).abs() < 1e-8);
        }
    }
}

/// Central-difference Stokes residual decays like the square of the step.
#[test]
fn finite_difference_residual_is_second_order() {
    let x = Vec3::new(0.6, -0.45, 0.8);
    let res = |h: f64| {
        let phi = |y: Vec3| oseen_tensor(y).unwrap();
        let mut lap = phi(x).scale(-6.0);
        for k in 0..3 {
            let mut e = Vec3::ZERO;
            e[k] = h;
            lap = lap + phi(x + e) + phi(x - e);
        }
        let lap = lap.scale(1.0 / (h * h));
        let mut w = 0.0f64;
        for i in 0..3 {
            let mut e = Vec3::ZERO;
            e[i] = h;
            let dp = (oseen_pressure(x + e).unwrap() - oseen_pressure(x - e).unwrap()) * (0.5 / h);
            for j in 0..3 {
                w = w.max((lap.0[i][j] - dp[j]).abs());
            }
        }
        w
    };
    let r1 = res(0.02);
    let r2 = res(0.01);
    assert!(((r1 / r2).log2() - 2.0).abs() < 0.1);
}
