mod common;

use common::*;
use nalgebra::{DMatrix, DVector, Matrix3, Vector3};
use pairsed_core::pair::*;
use pairsed_core::reflections::*;
use pairsed_core::{Error, Mat3, Vec3};
use proptest::prelude::*;
use std::f64::consts::PI;

fn oseen_na(x: Vector3<f64>) -> Matrix3<f64> {
    let r = x.norm();
    (Matrix3::identity() / r + x * x.transpose() / (r * r * r)) / (8.0 * PI)
}

/// 6x6 mobility `[[a1, a2], [a2, a1]]` with `a2 = 3/(8|xi|) (I + xi xi^T/|xi|^2)`.
fn mobility6(xi: Vec3) -> DMatrix<f64> {
    let x = na_v(xi);
    let n = x.norm();
    let a2 = (Matrix3::identity() + x * x.transpose() / (n * n)) * (3.0 / (8.0 * n));
    let mut m = DMatrix::zeros(6, 6);
    m.view_mut((0, 0), (3, 3)).copy_from(&Matrix3::identity());
    m.view_mut((3, 3), (3, 3)).copy_from(&Matrix3::identity());
    m.view_mut((0, 3), (3, 3)).copy_from(&a2);
    m.view_mut((3, 0), (3, 3)).copy_from(&a2);
    m
}

/// Dense matrix of one reflection acting on the stacked sphere velocities.
fn reflection_matrix(cloud: &Cloud, two_stokeslet: bool) -> DMatrix<f64> {
    let n = cloud.len();
    let r = cloud.radius;
    let mut l = DMatrix::zeros(6 * n, 6 * n);
    for j in 0..n {
        // forces = -6 pi R res_j v_j
        let res = mobility6(cloud.xi[j]).try_inverse().unwrap() * (-6.0 * PI * r);
        let cj = na_v(cloud.centers[j]);
        let sj = [cj + na_v(cloud.xi[j]) * r, cj - na_v(cloud.xi[j]) * r];
        for i in 0..n {
            if i == j {
                continue;
            }
            let ci = na_v(cloud.centers[i]);
            let targets = [ci + na_v(cloud.xi[i]) * r, ci - na_v(cloud.xi[i]) * r];
            for (a, x) in targets.iter().enumerate() {
                // out_ia = sum_b K_b F_jb with K_b the kernel seen from source b
                let kb: [Matrix3<f64>; 2] = if two_stokeslet {
                    [oseen_na(sj[0] - x), oseen_na(sj[1] - x)]
                } else {
                    [oseen_na(cj - x), oseen_na(cj - x)]
                };
                for b in 0..2 {
                    let rows = res.rows(3 * b, 3);
                    let block = kb[b] * rows;
                    let mut dst = l.view_mut((6 * i + 3 * a, 6 * j), (3, 6));
                    dst += block;
                }
            }
        }
    }
    l
}

fn stack(v: &[[Vec3; 2]]) -> DVector<f64> {
    DVector::from_iterator(
        6 * v.len(),
        v.iter().flat_map(|p| p.iter().flat_map(|u| u.0)),
    )
}

fn random_cloud(n: usize, spread: f64, radius: f64, seed: u64) -> Cloud {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut centers: Vec<Vec3> = Vec::new();
    while centers.len() < n {
        let c = Vec3(std::array::from_fn(|_| rng.random_range(-spread..spread)));
        if centers.iter().all(|d| (*d - c).norm() > 20.0 * radius) {
            centers.push(c);
        }
    }
    let xi = (0..n)
        .map(|_| {
            let d = Vec3(std::array::from_fn(|_| rng.random_range(-1.0..1.0)));
            d * (rng.random_range(1.5..3.0) / d.norm())
        })
        .collect();
    Cloud {
        centers,
        xi,
        radius,
        kappa_g: Vec3::new(0.1, -0.2, -1.0),
    }
}

proptest! {
    #[test]
    fn inversion_relations(xi in shell(1.0 + 1e-9, 50.0)) {
        let m = mobility_pair(xi).unwrap();
        let r = resistance_pair(xi).unwrap();
        let (a1, a2) = (m.a1.matrix(), m.a2.matrix());
        let (b1, b2) = (r.a1.matrix(), r.a2.matrix());
        prop_assert!(((b1 + b2) * (a1 + a2) - Mat3::IDENTITY).max_abs() < 1e-12);
        prop_assert!((b1 * a2 + b2 * a1).max_abs() < 1e-12);
        prop_assert!((b1 * a1 + b2 * a2 - Mat3::IDENTITY).max_abs() < 1e-12);
    }

    #[test]
    fn resistance_matches_dense_inverse(xi in shell(1.0 + 1e-6, 50.0)) {
        let dense = mobility6(xi).try_inverse().unwrap();
        let r = resistance_pair(xi).unwrap();
        let (b1, b2) = (na(r.a1.matrix()), na(r.a2.matrix()));
        prop_assert!((dense.view((0, 0), (3, 3)) - b1).amax() < 1e-12);
        prop_assert!((dense.view((0, 3), (3, 3)) - b2).amax() < 1e-12);
    }

    #[test]
    fn frame_equivariance(xi in shell(1.0 + 1e-9, 50.0), q in rot()) {
        let m = mobility_pair(xi).unwrap();
        let mq = mobility_pair(q * xi).unwrap();
        prop_assert!((mq.a2.matrix() - q * m.a2.matrix() * q.transpose()).max_abs() < 1e-12);
        let r = resistance_pair(xi).unwrap();
        let rq = resistance_pair(q * xi).unwrap();
        prop_assert!((rq.a1.matrix() - q * r.a1.matrix() * q.transpose()).max_abs() < 1e-12);
        prop_assert!((rq.a2.matrix() - q * r.a2.matrix() * q.transpose()).max_abs() < 1e-12);
    }

    #[test]
    fn exchange_symmetry(xi in shell(1.0 + 1e-9, 50.0)) {
        prop_assert_eq!(settling_matrix(xi).unwrap(), settling_matrix(-xi).unwrap());
    }

    #[test]
    fn settling_pair_feels_its_weight(xi in shell(1.1, 20.0), radius in 1e-4f64..1e-1) {
        let kg = Vec3::new(0.0, 0.3, -1.0);
        let u = settling_velocity(xi, kg).unwrap();
        let f = pair_forces(xi, u, u, radius).unwrap();
        let mg = kg * (6.0 * PI * radius);
        prop_assert!((f.f1 + mg).max_abs() < 1e-12 * mg.norm());
        prop_assert!((f.f2 + mg).max_abs() < 1e-12 * mg.norm());
    }

    #[test]
    fn far_field_refinements_agree_to_second_order(dir in shell(1.0, 1.0 + 1e-9), xi in shell(1.5, 4.0)) {
        let geom = PairGeometry { center: Vec3::ZERO, xi, radius: 0.01 };
        let kg = Vec3::new(0.0, 0.0, -1.0);
        let u = settling_velocity(xi, kg).unwrap();
        let forces = pair_forces(xi, u, u, 0.01).unwrap();
        let diff = |r: f64| {
            let x = dir * r;
            (pair_field(x, &geom, &forces, Refinement::Leading, 4.0).unwrap()
                - pair_field(x, &geom, &forces, Refinement::TwoStokeslet, 4.0).unwrap())
            .norm()
        };
        let slope = (diff(4.0) / diff(2.0)).log2();
        prop_assert!((slope + 3.0).abs() < 0.2, "slope {slope}");
    }
}

#[test]
fn settling_factors_closed_form() {
    let down = Vec3::new(0.0, 0.0, -1.0);
    let factor = |xi: Vec3| (settling_matrix(xi).unwrap() * down).norm();
    for n in [1.5, 2.0, 4.0, 8.0] {
        let v = factor(Vec3::new(0.0, 0.0, n));
        let h = factor(Vec3::new(0.0, n, 0.0));
        assert!((v - (1.0 + 3.0 / (4.0 * n))).abs() < 1e-15);
        assert!((h - (1.0 + 3.0 / (8.0 * n))).abs() < 1e-15);
        assert!(v > h && h > 1.0);
    }
    assert!((factor(Vec3::new(0.0, 0.0, 2.0)) - 1.375).abs() < 1e-12);
    assert!((factor(Vec3::new(2.0, 0.0, 0.0)) - 1.1875).abs() < 1e-12);
}

#[test]
fn overlapping_spheres_rejected() {
    assert!(matches!(mobility_pair(Vec3::new(0.0, 0.0, 1.0)), Err(Error::Overlap { .. })));
    assert!(matches!(mobility_pair(Vec3::new(0.0, 0.5, 0.0)), Err(Error::Overlap { .. })));
}

#[test]
fn field_rejected_inside_validity_radius() {
    let geom = PairGeometry { center: Vec3::ZERO, xi: Vec3::new(0.0, 0.0, 2.0), radius: 0.1 };
    let f = PairForces { f1: Vec3::new(0.0, 0.0, -1.0), f2: Vec3::new(0.0, 0.0, -1.0) };
    let e = pair_field(Vec3::new(1.5, 0.0, 0.0), &geom, &f, Refinement::Leading, 4.0);
    assert!(matches!(e, Err(Error::OutsideValidity { .. })));
    assert!(pair_field(Vec3::new(1.7, 0.0, 0.0), &geom, &f, Refinement::Leading, 4.0).is_ok());
}

#[test]
fn reflections_match_dense_oracle() {
    for (n, seed, two) in [(2, 1, false), (2, 2, true), (5, 3, false), (5, 4, true)] {
        let cloud = random_cloud(n, 0.5, 0.01, seed);
        let opts = ReflectionOptions {
            tol: 1e-14,
            refinement: if two { Refinement::TwoStokeslet } else { Refinement::Leading },
            ..ReflectionOptions::default()
        };
        let sol = solve_reflections(&cloud, &opts).unwrap();
        let l = reflection_matrix(&cloud, two);
        let s = stack(&sol.isolated.iter().map(|u| [*u, *u]).collect::<Vec<_>>());
        let u_oracle = &s - &l * &s;
        let u = stack(&sol.velocities);
        assert!((&u - &u_oracle).amax() < 1e-13, "velocities n={n}");
        let series = (DMatrix::identity(6 * n, 6 * n) - &l).lu().solve(&u).unwrap();
        assert!((stack(&sol.series_sum) - series).amax() < 1e-12, "series n={n}");
        let one = reflect_step(&cloud, &sol.velocities, &opts).unwrap();
        assert!((stack(&one) - &l * &u).amax() < 1e-13);
        assert!(sol.force_residual < 1e-10, "{}", sol.force_residual);
    }
}

#[test]
fn single_pair_needs_no_reflection() {
    let cloud = random_cloud(1, 0.5, 0.01, 9);
    let sol = solve_reflections(&cloud, &ReflectionOptions::default()).unwrap();
    assert_eq!(sol.iterations, 0);
    assert!(sol.ratios.is_empty());
    assert_eq!(sol.velocities[0][0], sol.isolated[0]);
    assert!(sol.force_residual < 1e-14);
}

#[test]
fn dilute_cloud_contracts_and_dense_cloud_diverges() {
    let dilute = random_cloud(20, 1.0, 1e-3, 5);
    let sol = solve_reflections(&dilute, &ReflectionOptions::default()).unwrap();
    assert!(contraction_ratio(&sol) < 0.5);
    assert!(sol.increments.windows(2).all(|w| w[1] < w[0]));

    // Pairs along a line at a few radii apart.
    let n = 40;
    let r = 0.05;
    let dense = Cloud {
        centers: (0..n).map(|i| Vec3::new(i as f64 * 8.0 * r, 0.0, 0.0)).collect(),
        xi: vec![Vec3::new(1.05, 0.0, 0.0); n],
        radius: r,
        kappa_g: Vec3::new(1.0, 0.0, 0.0),
    };
    let opts = ReflectionOptions { m1: 1.5, ..ReflectionOptions::default() };
    match solve_reflections(&dense, &opts) {
        Err(Error::ReflectionDivergence { ratios, .. }) => assert!(*ratios.last().unwrap() >= 1.0),
        other => panic!("expected divergence, got {other:?}"),
    }
}

#[test]
fn too_few_iterations_is_nonconvergence() {
    let cloud = random_cloud(10, 0.3, 2e-3, 6);
    let opts = ReflectionOptions { max_iter: 1, tol: 1e-15, ..ReflectionOptions::default() };
    assert!(matches!(
        solve_reflections(&cloud, &opts),
        Err(Error::NonConvergence { iterations: 1, .. })
    ));
}

#[test]
fn reflection_solution_is_rotation_equivariant() {
    let cloud = random_cloud(6, 0.5, 0.005, 8);
    let q = rotation(Vec3::new(0.3, -1.0, 0.4), 1.1);
    let rotated = Cloud {
        centers: cloud.centers.iter().map(|c| q * *c).collect(),
        xi: cloud.xi.iter().map(|x| q * *x).collect(),
        radius: cloud.radius,
        kappa_g: q * cloud.kappa_g,
    };
    let a = solve_reflections(&cloud, &ReflectionOptions::default()).unwrap();
    let b = solve_reflections(&rotated, &ReflectionOptions::default()).unwrap();
    for (u, v) in a.velocities.iter().zip(&b.velocities) {
        for k in 0..2 {
            assert!((q * u[k] - v[k]).max_abs() < 1e-12);
        }
    }
}
