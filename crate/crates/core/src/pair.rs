//! Hydrodynamics of a single pair of spheres in the point-force closure.
//!
//! A pair is described by its center `x+` and the scaled half-separation `xi`,
//! so the spheres sit at `x+ + R xi` and `x+ - R xi`.

use core::f64::consts::PI;

use crate::error::{check_finite, check_positive, Error, Result};
use crate::kernels::oseen_tensor;
use crate::linalg::{Mat3, Vec3};

/// Matrix of the form `iso I + axial d d^T` with unit `d`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RadialTensor {
    pub iso: f64,
    pub axial: f64,
    pub dir: Vec3,
}

impl RadialTensor {
    pub fn matrix(&self) -> Mat3 {
        Mat3::IDENTITY.scale(self.iso) + self.dir.outer(self.dir).scale(self.axial)
    }

    pub fn apply(&self, v: Vec3) -> Vec3 {
        v * self.iso + self.dir * (self.axial * self.dir.dot(v))
    }

    pub fn add(&self, o: &RadialTensor) -> RadialTensor {
        RadialTensor {
            iso: self.iso + o.iso,
            axial: self.axial + o.axial,
            dir: self.dir,
        }
    }

    pub fn sub(&self, o: &RadialTensor) -> RadialTensor {
        RadialTensor {
            iso: self.iso - o.iso,
            axial: self.axial - o.axial,
            dir: self.dir,
        }
    }

    pub fn scale(&self, s: f64) -> RadialTensor {
        RadialTensor {
            iso: self.iso * s,
            axial: self.axial * s,
            dir: self.dir,
        }
    }

    /// Closed-form inverse; fails when an eigenvalue vanishes.
    pub fn inverse(&self) -> Result<RadialTensor> {
        let g = self.iso;
        let gh = self.iso + self.axial;
        if g == 0.0 || gh == 0.0 || !g.is_finite() || !gh.is_finite() {
            return Err(Error::InvalidParameter {
                name: "tensor",
                reason: alloc::format!("singular radial tensor ({}, {})", self.iso, self.axial),
            });
        }
        Ok(RadialTensor {
            iso: 1.0 / g,
            axial: -self.axial / (g * gh),
            dir: self.dir,
        })
    }
}

/// Geometry of one pair.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PairGeometry {
    pub center: Vec3,
    pub xi: Vec3,
    pub radius: f64,
}

impl PairGeometry {
    pub fn sphere1(&self) -> Vec3 {
        self.center + self.xi * self.radius
    }

    pub fn sphere2(&self) -> Vec3 {
        self.center - self.xi * self.radius
    }

    pub fn spheres(&self) -> [Vec3; 2] {
        [self.sphere1(), self.sphere2()]
    }
}

/// Mobility blocks `(a1, a2)`: `-6 pi R U_1 = a1 F_1 + a2 F_2` and symmetrically.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MobilityPair {
    pub a1: RadialTensor,
    pub a2: RadialTensor,
}

/// Resistance blocks `(A1, A2)`: `F_1 = -6 pi R (A1 U_1 + A2 U_2)` and symmetrically.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ResistancePair {
    pub a1: RadialTensor,
    pub a2: RadialTensor,
}

impl ResistancePair {
    pub fn a1_matrix(&self) -> Mat3 {
        self.a1.matrix()
    }

    pub fn a2_matrix(&self) -> Mat3 {
        self.a2.matrix()
    }
}

/// Drag forces exerted on the two spheres.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct PairForces {
    pub f1: Vec3,
    pub f2: Vec3,
}

/// A closure model mapping pair geometry to its mobility blocks.
pub trait MobilityClosure {
    fn mobility(&self, xi: Vec3) -> Result<MobilityPair>;

    fn resistance(&self, xi: Vec3) -> Result<ResistancePair> {
        let m = self.mobility(xi)?;
        let sum = m.a1.add(&m.a2).inverse()?;
        let diff = m.a1.sub(&m.a2).inverse()?;
        Ok(ResistancePair {
            a1: sum.add(&diff).scale(0.5),
            a2: sum.sub(&diff).scale(0.5),
        })
    }

    /// Inverse settling matrix, mapping `kappa g` to the isolated pair velocity.
    fn settling(&self, xi: Vec3) -> Result<RadialTensor> {
        let m = self.mobility(xi)?;
        Ok(m.a1.add(&m.a2))
    }
}

/// Point-force closure: each sphere sees the other as a Stokeslet.
#[derive(Clone, Copy, Debug, Default)]
pub struct PointForce;

impl MobilityClosure for PointForce {
    fn mobility(&self, xi: Vec3) -> Result<MobilityPair> {
        check_finite(xi, "xi")?;
        let n = xi.norm();
        if n <= 1.0 {
            return Err(Error::Overlap { norm: n });
        }
        let dir = xi * (1.0 / n);
        let c = 3.0 / (8.0 * n);
        Ok(MobilityPair {
            a1: RadialTensor {
                iso: 1.0,
                axial: 0.0,
                dir,
            },
            a2: RadialTensor {
                iso: c,
                axial: c,
                dir,
            },
        })
    }
}

pub fn mobility_pair(xi: Vec3) -> Result<MobilityPair> {
    PointForce.mobility(xi)
}

pub fn resistance_pair(xi: Vec3) -> Result<ResistancePair> {
    PointForce.resistance(xi)
}

/// Inverse settling matrix `I + a2(xi)`.
pub fn settling_matrix(xi: Vec3) -> Result<Mat3> {
    Ok(PointForce.settling(xi)?.matrix())
}

/// Velocity of an isolated pair settling under `kappa_g`.
pub fn settling_velocity(xi: Vec3, kappa_g: Vec3) -> Result<Vec3> {
    Ok(PointForce.settling(xi)?.apply(kappa_g))
}

/// Drag forces for prescribed sphere velocities.
pub fn pair_forces(xi: Vec3, u1: Vec3, u2: Vec3, radius: f64) -> Result<PairForces> {
    check_positive(radius, "radius")?;
    check_finite(u1, "u1")?;
    check_finite(u2, "u2")?;
    let r = resistance_pair(xi)?;
    Ok(forces_from(&r, u1, u2, radius))
}

pub(crate) fn forces_from(r: &ResistancePair, u1: Vec3, u2: Vec3, radius: f64) -> PairForces {
    let c = -6.0 * PI * radius;
    PairForces {
        f1: (r.a1.apply(u1) + r.a2.apply(u2)) * c,
        f2: (r.a2.apply(u1) + r.a1.apply(u2)) * c,
    }
}

/// Far-field representation of the flow generated by a pair.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Refinement {
    /// Single Stokeslet at the center carrying the total force.
    #[default]
    Leading,
    /// One Stokeslet per sphere.
    TwoStokeslet,
}

/// Velocity induced at `x` by a pair exerting `forces`; points within `4 m1 R` of the center are rejected.
pub fn pair_field(
    x: Vec3,
    geom: &PairGeometry,
    forces: &PairForces,
    refinement: Refinement,
    m1: f64,
) -> Result<Vec3> {
    check_finite(x, "evaluation point")?;
    let distance = (x - geom.center).norm();
    let radius = 4.0 * m1 * geom.radius;
    if distance <= radius {
        return Err(Error::OutsideValidity { distance, radius });
    }
    Ok(pair_field_unchecked(x, geom, forces, refinement))
}

pub(crate) fn pair_field_unchecked(
    x: Vec3,
    geom: &PairGeometry,
    forces: &PairForces,
    refinement: Refinement,
) -> Vec3 {
    match refinement {
        Refinement::Leading => {
            let phi = oseen_tensor(geom.center - x).unwrap_or(Mat3::ZERO);
            -(phi * (forces.f1 + forces.f2))
        }
        Refinement::TwoStokeslet => {
            let p1 = oseen_tensor(geom.sphere1() - x).unwrap_or(Mat3::ZERO);
            let p2 = oseen_tensor(geom.sphere2() - x).unwrap_or(Mat3::ZERO);
            -(p1 * forces.f1) - p2 * forces.f2
        }
    }
}
