//! Method of reflections for a cloud of sedimenting pairs in the point-force closure.
//!
//! Each pair is first settled in isolation. The flows these self velocities generate are added
//! to give the sphere velocities of the interacting cloud. Starting from those velocities, the
//! reflection series `V^{p+1} = R V^p` (forces from prescribed velocities, minus the flow they
//! induce on the other pairs) is summed; its limit reproduces the isolated velocities, which
//! checks that every sphere feels exactly the buoyant weight. The contraction ratios of the
//! series are recorded.

use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use crate::error::{check_finite, check_positive, Error, Result};
use crate::linalg::Vec3;
use crate::pair::{
    forces_from, pair_field_unchecked, resistance_pair, settling_velocity, PairForces,
    PairGeometry, Refinement, ResistancePair,
};

/// Pairs sharing a common sphere radius.
#[derive(Clone, Debug, PartialEq)]
pub struct Cloud {
    pub centers: Vec<Vec3>,
    pub xi: Vec<Vec3>,
    pub radius: f64,
    pub kappa_g: Vec3,
}

impl Cloud {
    pub fn len(&self) -> usize {
        self.centers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centers.is_empty()
    }

    pub fn geometry(&self, i: usize) -> PairGeometry {
        PairGeometry {
            center: self.centers[i],
            xi: self.xi[i],
            radius: self.radius,
        }
    }

    /// Buoyant weight of one sphere, `6 pi R kappa g`.
    pub fn weight(&self) -> Vec3 {
        self.kappa_g * (6.0 * PI * self.radius)
    }

    fn validate(&self) -> Result<()> {
        check_positive(self.radius, "radius")?;
        check_finite(self.kappa_g, "kappa_g")?;
        if self.centers.len() != self.xi.len() {
            return Err(Error::InvalidParameter {
                name: "cloud",
                reason: alloc::format!(
                    "{} centers but {} orientations",
                    self.centers.len(),
                    self.xi.len()
                ),
            });
        }
        for (c, x) in self.centers.iter().zip(&self.xi) {
            check_finite(*c, "center")?;
            check_finite(*x, "xi")?;
        }
        Ok(())
    }
}

/// Options of the reflection solver.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ReflectionOptions {
    /// Stop once the sup-norm of an increment falls below `tol |kappa g|`.
    pub tol: f64,
    pub max_iter: usize,
    pub refinement: Refinement,
    /// Upper bound on `|xi|`; flows are only evaluated farther than `4 m1 R` from a pair center.
    pub m1: f64,
}

impl Default for ReflectionOptions {
    fn default() -> Self {
        ReflectionOptions {
            tol: 1e-10,
            max_iter: 200,
            refinement: Refinement::Leading,
            m1: 4.0,
        }
    }
}

/// Sphere velocities of the cloud and the diagnostics of the reflection series.
#[derive(Clone, Debug, PartialEq)]
pub struct ReflectionSolution {
    /// Velocities `[U_1, U_2]` of the two spheres of each pair.
    pub velocities: Vec<[Vec3; 2]>,
    /// Velocity of each pair settling alone.
    pub isolated: Vec<Vec3>,
    /// Sum of the reflection series started from `velocities`.
    pub series_sum: Vec<[Vec3; 2]>,
    /// Forces on the spheres computed from `series_sum` and the flow it generates.
    pub forces: Vec<PairForces>,
    /// Sup-norm ratios of successive increments.
    pub ratios: Vec<f64>,
    /// Sup-norm of every increment, starting with the initial term.
    pub increments: Vec<f64>,
    /// Number of reflection increments computed.
    pub iterations: usize,
    /// `max_i (|F_1 + m g| + |F_2 + m g|) / |m g|`.
    pub force_residual: f64,
}

impl ReflectionSolution {
    pub fn center_velocities(&self) -> Vec<Vec3> {
        self.velocities.iter().map(|u| (u[0] + u[1]) * 0.5).collect()
    }

    /// `(U_1 - U_2) / (2 R)`, the rate of change of `xi`.
    pub fn xi_velocities(&self, radius: f64) -> Vec<Vec3> {
        self.velocities
            .iter()
            .map(|u| (u[0] - u[1]) * (0.5 / radius))
            .collect()
    }
}

struct Prepared {
    geoms: Vec<PairGeometry>,
    resist: Vec<ResistancePair>,
}

fn prepare(cloud: &Cloud) -> Result<Prepared> {
    cloud.validate()?;
    let geoms: Vec<_> = (0..cloud.len()).map(|i| cloud.geometry(i)).collect();
    let resist = cloud
        .xi
        .iter()
        .map(|x| resistance_pair(*x))
        .collect::<Result<Vec<_>>>()?;
    Ok(Prepared { geoms, resist })
}

/// One reflection: forces from the prescribed sphere velocities `v`, then minus the flow they
/// induce at the spheres of every other pair.
pub fn reflect_step(
    cloud: &Cloud,
    v: &[[Vec3; 2]],
    opts: &ReflectionOptions,
) -> Result<Vec<[Vec3; 2]>> {
    let p = prepare(cloud)?;
    reflect_prepared(&p, cloud.radius, v, opts)
}

fn reflect_prepared(
    p: &Prepared,
    radius: f64,
    v: &[[Vec3; 2]],
    opts: &ReflectionOptions,
) -> Result<Vec<[Vec3; 2]>> {
    let n = p.geoms.len();
    if v.len() != n {
        return Err(Error::InvalidParameter {
            name: "velocities",
            reason: alloc::format!("expected {n} pairs, got {}", v.len()),
        });
    }
    let forces: Vec<PairForces> = (0..n)
        .map(|j| forces_from(&p.resist[j], v[j][0], v[j][1], radius))
        .collect();
    let excl = 4.0 * opts.m1 * radius;
    let mut out = vec![[Vec3::ZERO; 2]; n];
    for i in 0..n {
        let targets = p.geoms[i].spheres();
        for (a, x) in targets.iter().enumerate() {
            let mut acc = Vec3::ZERO;
            for j in 0..n {
                if j == i {
                    continue;
                }
                let distance = (*x - p.geoms[j].center).norm();
                if distance <= excl {
                    return Err(Error::OutsideValidity {
                        distance,
                        radius: excl,
                    });
                }
                acc += pair_field_unchecked(*x, &p.geoms[j], &forces[j], opts.refinement);
            }
            out[i][a] = -acc;
        }
    }
    Ok(out)
}

fn sup(v: &[[Vec3; 2]]) -> f64 {
    v.iter()
        .fold(0.0f64, |m, u| m.max(u[0].norm()).max(u[1].norm()))
}

/// Sphere velocities of a settling cloud together with the reflection diagnostics.
pub fn solve_reflections(cloud: &Cloud, opts: &ReflectionOptions) -> Result<ReflectionSolution> {
    let p = prepare(cloud)?;
    let n = cloud.len();
    let isolated = cloud
        .xi
        .iter()
        .map(|x| settling_velocity(*x, cloud.kappa_g))
        .collect::<Result<Vec<_>>>()?;
    let s: Vec<[Vec3; 2]> = isolated.iter().map(|u| [*u, *u]).collect();
    let back = reflect_prepared(&p, cloud.radius, &s, opts)?;
    let velocities: Vec<[Vec3; 2]> = s
        .iter()
        .zip(&back)
        .map(|(a, b)| [a[0] - b[0], a[1] - b[1]])
        .collect();

    let scale = cloud.kappa_g.norm();
    let stop = opts.tol * if scale > 0.0 { scale } else { 1.0 };
    let mut sum = velocities.clone();
    let mut cur = velocities.clone();
    let mut size = sup(&cur);
    let mut increments = vec![size];
    let mut ratios = Vec::new();
    let mut iterations = 0;
    while n > 1 && size >= stop && size > 0.0 {
        if iterations >= opts.max_iter {
            return Err(Error::NonConvergence {
                iterations,
                history: increments,
            });
        }
        let next = reflect_prepared(&p, cloud.radius, &cur, opts)?;
        iterations += 1;
        let next_size = sup(&next);
        if !next_size.is_finite() {
            return Err(Error::ReflectionDivergence {
                iteration: iterations,
                ratios,
            });
        }
        let ratio = next_size / size;
        ratios.push(ratio);
        increments.push(next_size);
        if ratio >= 1.0 {
            return Err(Error::ReflectionDivergence {
                iteration: iterations,
                ratios,
            });
        }
        for (s, v) in sum.iter_mut().zip(&next) {
            s[0] += v[0];
            s[1] += v[1];
        }
        cur = next;
        size = next_size;
    }

    let forces: Vec<PairForces> = (0..n)
        .map(|j| forces_from(&p.resist[j], sum[j][0], sum[j][1], cloud.radius))
        .collect();
    let mg = cloud.weight();
    let mg_norm = mg.norm();
    let force_residual = forces
        .iter()
        .map(|f| ((f.f1 + mg).norm() + (f.f2 + mg).norm()) / mg_norm.max(f64::MIN_POSITIVE))
        .fold(0.0, f64::max);

    Ok(ReflectionSolution {
        velocities,
        isolated,
        series_sum: sum,
        forces,
        ratios,
        increments,
        iterations,
        force_residual,
    })
}

/// Largest recorded contraction ratio; zero when the series terminated immediately.
pub fn contraction_ratio(sol: &ReflectionSolution) -> f64 {
    sol.ratios.iter().fold(0.0, |m, r| m.max(*r))
}
