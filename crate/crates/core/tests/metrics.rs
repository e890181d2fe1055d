mod common;

use common::*;
use pairsed_core::density::DensitySpec;
use pairsed_core::metrics::*;
use pairsed_core::Vec3;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::f64::consts::PI;

fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for p in permutations(n - 1) {
        for k in 0..n {
            let mut q = p.clone();
            q.insert(k, n - 1);
            out.push(q);
        }
    }
    out
}

fn minimax(a: &[Vec3], b: &[Vec3]) -> f64 {
    permutations(a.len())
        .iter()
        .map(|p| p.iter().enumerate().fold(0.0f64, |m, (i, j)| m.max((a[i] - b[*j]).norm())))
        .fold(f64::INFINITY, f64::min)
}

fn points(n: usize) -> impl Strategy<Value = Vec<Vec3>> {
    proptest::collection::vec(vec3(-1.0, 1.0), n)
}

proptest! {
    #[test]
    fn bottleneck_equals_permutation_minimax(
        (a, b) in (1usize..=6).prop_flat_map(|n| (points(n), points(n)))
    ) {
        let w = w_infinity_empirical(&EmpiricalMeasure::new(a.clone()), &EmpiricalMeasure::new(b.clone())).unwrap();
        prop_assert_eq!(w, minimax(&a, &b));
    }

    #[test]
    fn bottleneck_is_symmetric_and_sees_translations(a in points(12), c in vec3(-0.5, 0.5)) {
        let ea = EmpiricalMeasure::new(a.clone());
        let shifted = EmpiricalMeasure::new(a.iter().map(|p| *p + c).collect());
        let w = w_infinity_empirical(&ea, &shifted).unwrap();
        prop_assert!(w <= c.norm() + 1e-15);
        prop_assert_eq!(w, w_infinity_empirical(&shifted, &ea).unwrap());
    }

    #[test]
    fn min_distance_matches_brute_force(a in proptest::collection::vec(vec3(-3.0, 3.0), 2..300)) {
        prop_assert_eq!(min_distance(&a), min_distance_brute(&a));
    }

    #[test]
    fn min_distance_on_clustered_points(a in proptest::collection::vec(vec3(-1e-3, 1e-3), 2..50), far in vec3(10.0, 20.0)) {
        let mut pts = a.clone();
        pts.push(far);
        prop_assert_eq!(min_distance(&pts), min_distance_brute(&pts));
    }

    #[test]
    fn power_law_slope_is_recovered(p in -3.0f64..3.0, c in 0.1f64..10.0) {
        let xs: Vec<f64> = (1..8).map(|k| 2f64.powi(k)).collect();
        let ys: Vec<f64> = xs.iter().map(|x| c * x.powf(p)).collect();
        let f = fit_slope(&xs, &ys).unwrap();
        prop_assert!((f.slope - p).abs() < 1e-12);
        prop_assert!((f.intercept - c.ln()).abs() < 1e-10);
    }
}

#[test]
fn mismatched_sizes_rejected() {
    let a = EmpiricalMeasure::new(vec![Vec3::ZERO]);
    let b = EmpiricalMeasure::new(vec![Vec3::ZERO, Vec3::new(1.0, 0.0, 0.0)]);
    assert!(w_infinity_empirical(&a, &b).is_err());
    assert!(fit_slope(&[1.0], &[1.0]).is_err());
    assert!(fit_slope(&[1.0, 2.0], &[1.0, -1.0]).is_err());
}

#[test]
fn density_distance_bounds() {
    let rho = DensitySpec::UniformBall { center: Vec3::ZERO, radius: 1.0 };
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut prev = f64::INFINITY;
    for n in [64, 512] {
        let pts = rho.sample_separated(n, 0.5 * (4.0 * PI / (3.0 * n as f64)).cbrt(), &mut rng).unwrap();
        let d = w_infinity_to_density(&EmpiricalMeasure::new(pts), &rho, (3.0 * (n as f64).cbrt()) as usize).unwrap();
        assert!(d.value >= w_infinity_lower_bound(n, rho.sup()));
        assert!(d.value < 2.0);
        assert!(d.value < prev);
        prev = d.value;
    }
    // Too few massive cells for the requested atoms.
    let pts = vec![Vec3::ZERO; 100];
    assert!(w_infinity_to_density(&EmpiricalMeasure::new(pts), &rho, 2).is_err());
}

#[test]
fn jo_sums_direct() {
    let pts = vec![Vec3::ZERO, Vec3::new(1.0, 0.0, 0.0), Vec3::new(0.0, 2.0, 0.0)];
    // Row of the origin: 1 + 1/2 for k = 1.
    assert!((jo_value(&pts, 1.0) - 1.5 / 3.0).abs() < 1e-15);
    let v = jo_values(&pts, &[1.0, 2.0]);
    assert!((v[0] - 0.5).abs() < 1e-15);
    assert!((v[1] - 1.25 / 3.0).abs() < 1e-15);
    assert!(jo_bound(3.5, 1.0, 0.1, 0.1, 1.0).is_err());
    let b3 = jo_bound(3.0, 1.0, 0.5, 0.5, 2.0).unwrap();
    assert!((b3 - 2.0 * (1.0 + 0.5f64.ln().abs() + 1.0)).abs() < 1e-14);
}

#[test]
fn dilution_flags() {
    let pts = vec![Vec3::ZERO, Vec3::new(0.1, 0.0, 0.0)];
    let xi = vec![Vec3::new(0.0, 0.0, 1.2), Vec3::new(0.0, 0.0, 5.0)];
    let r = dilution_report(&pts, &xi, 0.2, &Thresholds::default());
    assert!((r.ratio2 - 0.8).abs() < 1e-12);
    assert!((r.ratio3 - 8.0).abs() < 1e-12);
    assert_eq!(r.flags, vec![Flag::XiAboveM1, Flag::XiBelowM2, Flag::Ratio3Exceeded]);
    assert!(Thresholds { m1: 1.5, m2: 3.0, ..Thresholds::default() }.validate().is_err());
}

#[test]
fn probes_keep_clear_of_particles() {
    let rho = DensitySpec::UniformBall { center: Vec3::ZERO, radius: 1.0 };
    let pts = vec![Vec3::ZERO, Vec3::new(0.3, 0.3, 0.3)];
    let probes = probe_lattice(&rho, 10, &pts, 0.25);
    assert!(!probes.is_empty());
    for p in &probes {
        assert!(p.norm() <= 1.0);
        assert!(pts.iter().all(|q| (*q - *p).norm() > 0.25));
    }
    assert!(probes.len() < probe_lattice(&rho, 10, &[], 0.25).len());
}
