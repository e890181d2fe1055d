//! Reference densities, samplers, and quadrature ensembles.

use alloc::format;
use alloc::vec::Vec;
use core::f64::consts::PI;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{check_finite, check_positive, Error, Result};
use crate::linalg::Vec3;
use crate::neighbors::CellList;
use crate::quadrature::Rule;

/// Piecewise-constant density on a box of cubic cells.
#[derive(Clone, Debug, PartialEq)]
pub struct TabulatedDensity {
    pub origin: Vec3,
    pub cell: f64,
    pub dims: [usize; 3],
    /// Nonnegative cell weights, `x` fastest; normalized on construction.
    pub weights: Vec<f64>,
}

impl TabulatedDensity {
    pub fn new(origin: Vec3, cell: f64, dims: [usize; 3], weights: Vec<f64>) -> Result<Self> {
        check_positive(cell, "cell")?;
        let n = dims[0] * dims[1] * dims[2];
        if weights.len() != n || n == 0 {
            return Err(Error::InvalidParameter {
                name: "weights",
                reason: format!("expected {n} cell weights, got {}", weights.len()),
            });
        }
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::InvalidParameter {
                name: "weights",
                reason: "weights must be finite and nonnegative".into(),
            });
        }
        let total: f64 = weights.iter().sum();
        if total <= 0.0 {
            return Err(Error::InvalidParameter {
                name: "weights",
                reason: "total weight must be positive".into(),
            });
        }
        let weights = weights.into_iter().map(|w| w / total).collect();
        Ok(TabulatedDensity {
            origin,
            cell,
            dims,
            weights,
        })
    }

    fn cell_of(&self, x: Vec3) -> Option<usize> {
        let mut idx = [0usize; 3];
        for a in 0..3 {
            let t = (x[a] - self.origin[a]) / self.cell;
            if !(t >= 0.0) || t >= self.dims[a] as f64 {
                return None;
            }
            idx[a] = t as usize;
        }
        Some(idx[0] + self.dims[0] * (idx[1] + self.dims[1] * idx[2]))
    }
}

/// A probability density on R^3.
#[derive(Clone, Debug, PartialEq)]
pub enum DensitySpec {
    UniformBall { center: Vec3, radius: f64 },
    /// Isotropic Gaussian restricted to the ball of radius `cutoff` and renormalized.
    TruncatedGaussian { center: Vec3, sigma: f64, cutoff: f64 },
    Tabulated(TabulatedDensity),
}

impl DensitySpec {
    pub fn validate(&self) -> Result<()> {
        match self {
            DensitySpec::UniformBall { center, radius } => {
                check_finite(*center, "center")?;
                check_positive(*radius, "radius")
            }
            DensitySpec::TruncatedGaussian {
                center,
                sigma,
                cutoff,
            } => {
                check_finite(*center, "center")?;
                check_positive(*sigma, "sigma")?;
                check_positive(*cutoff, "cutoff")
            }
            DensitySpec::Tabulated(_) => Ok(()),
        }
    }

    /// Density value at `x`.
    pub fn density(&self, x: Vec3) -> f64 {
        match self {
            DensitySpec::Tabulated(t) => t
                .cell_of(x)
                .map(|c| t.weights[c] / (t.cell * t.cell * t.cell))
                .unwrap_or(0.0),
            _ => {
                let (c, p) = self.radial().expect("radial density");
                p.value((x - c).norm())
            }
        }
    }

    /// Supremum of the density.
    pub fn sup(&self) -> f64 {
        match self {
            DensitySpec::Tabulated(t) => {
                t.weights.iter().fold(0.0f64, |m, w| m.max(*w)) / (t.cell * t.cell * t.cell)
            }
            _ => self.radial().expect("radial density").1.value(0.0),
        }
    }

    /// Axis-aligned box containing the support.
    pub fn bounding_box(&self) -> (Vec3, Vec3) {
        match self {
            DensitySpec::UniformBall { center, radius } => {
                let r = Vec3::new(*radius, *radius, *radius);
                (*center - r, *center + r)
            }
            DensitySpec::TruncatedGaussian { center, cutoff, .. } => {
                let r = Vec3::new(*cutoff, *cutoff, *cutoff);
                (*center - r, *center + r)
            }
            DensitySpec::Tabulated(t) => {
                let d = Vec3::new(
                    t.dims[0] as f64 * t.cell,
                    t.dims[1] as f64 * t.cell,
                    t.dims[2] as f64 * t.cell,
                );
                (t.origin, t.origin + d)
            }
        }
    }

    /// Center and radial profile when the density is radially symmetric.
    pub fn radial(&self) -> Option<(Vec3, RadialProfile)> {
        match self {
            DensitySpec::UniformBall { center, radius } => Some((
                *center,
                RadialProfile::Uniform {
                    radius: *radius,
                    value: 3.0 / (4.0 * PI * radius * radius * radius),
                },
            )),
            DensitySpec::TruncatedGaussian {
                center,
                sigma,
                cutoff,
            } => {
                let s = *sigma;
                let c = *cutoff;
                let t = c / s;
                let radial = s
                    * s
                    * s
                    * (libm::sqrt(PI / 2.0) * libm::erf(t / core::f64::consts::SQRT_2)
                        - t * libm::exp(-0.5 * t * t));
                Some((
                    *center,
                    RadialProfile::Gaussian {
                        sigma: s,
                        cutoff: c,
                        norm: 1.0 / (4.0 * PI * radial),
                    },
                ))
            }
            DensitySpec::Tabulated(_) => None,
        }
    }

    /// One sample from the density.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec3 {
        match self {
            DensitySpec::UniformBall { center, radius } => loop {
                let p = Vec3::new(
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                );
                if p.norm_sq() <= 1.0 {
                    return *center + p * *radius;
                }
            },
            DensitySpec::TruncatedGaussian {
                center,
                sigma,
                cutoff,
            } => loop {
                let p = Vec3::new(
                    rng.sample(StandardNormal),
                    rng.sample(StandardNormal),
                    rng.sample(StandardNormal),
                ) * *sigma;
                if p.norm() <= *cutoff {
                    return *center + p;
                }
            },
            DensitySpec::Tabulated(t) => {
                let u: f64 = rng.random();
                let mut acc = 0.0;
                let mut cell = t.weights.len() - 1;
                for (i, w) in t.weights.iter().enumerate() {
                    acc += w;
                    if u < acc && *w > 0.0 {
                        cell = i;
                        break;
                    }
                }
                let ix = cell % t.dims[0];
                let iy = (cell / t.dims[0]) % t.dims[1];
                let iz = cell / (t.dims[0] * t.dims[1]);
                let off = Vec3::new(
                    ix as f64 + rng.random::<f64>(),
                    iy as f64 + rng.random::<f64>(),
                    iz as f64 + rng.random::<f64>(),
                );
                t.origin + off * t.cell
            }
        }
    }

    /// `n` independent samples.
    pub fn sample_n<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Vec<Vec3> {
        (0..n).map(|_| self.sample(rng)).collect()
    }

    /// `n` samples conditioned on pairwise distances of at least `d_min` (sequential rejection).
    pub fn sample_separated<R: Rng + ?Sized>(
        &self,
        n: usize,
        d_min: f64,
        rng: &mut R,
    ) -> Result<Vec<Vec3>> {
        if d_min <= 0.0 {
            return Ok(self.sample_n(n, rng));
        }
        let (lo, hi) = self.bounding_box();
        let mut cells = CellList::empty(lo, hi, d_min);
        let mut pts: Vec<Vec3> = Vec::with_capacity(n);
        let budget = 1000 * n.max(1) + 10_000;
        let mut tries = 0usize;
        while pts.len() < n {
            tries += 1;
            if tries > budget {
                return Err(Error::Resolution(format!(
                    "could only place {} of {n} points at separation {d_min}",
                    pts.len()
                )));
            }
            let p = self.sample(rng);
            let mut ok = true;
            cells.for_each_near(p, |j| {
                if ok && (pts[j] - p).norm() < d_min {
                    ok = false;
                }
            });
            if ok {
                cells.insert(pts.len(), p);
                pts.push(p);
            }
        }
        Ok(pts)
    }

    /// Weighted nodes approximating integrals against the density.
    ///
    /// Radial densities use a Gauss rule in radius times a Gauss rule in `cos theta` times a
    /// uniform rule in azimuth; tabulated densities use cell centers.
    pub fn quadrature(&self, n_r: usize, n_theta: usize, n_phi: usize) -> Vec<(Vec3, f64)> {
        if let Some((c, prof)) = self.radial() {
            let rr = Rule::new(n_r);
            let rt = Rule::new(n_theta);
            let mut out = Vec::with_capacity(n_r * n_theta * n_phi);
            for (r, wr) in rr.mapped(0.0, prof.support()) {
                let wr = wr * r * r * prof.value(r);
                for (ct, wt) in rt.mapped(-1.0, 1.0) {
                    let st = libm::sqrt((1.0 - ct * ct).max(0.0));
                    for k in 0..n_phi {
                        let ph = 2.0 * PI * (k as f64 + 0.5) / n_phi as f64;
                        let dir = Vec3::new(st * libm::cos(ph), st * libm::sin(ph), ct);
                        out.push((c + dir * r, wr * wt * 2.0 * PI / n_phi as f64));
                    }
                }
            }
            let total: f64 = out.iter().map(|p| p.1).sum();
            for p in out.iter_mut() {
                p.1 /= total;
            }
            out
        } else if let DensitySpec::Tabulated(t) = self {
            let mut out = Vec::new();
            for (i, w) in t.weights.iter().enumerate() {
                if *w > 0.0 {
                    let ix = i % t.dims[0];
                    let iy = (i / t.dims[0]) % t.dims[1];
                    let iz = i / (t.dims[0] * t.dims[1]);
                    let p = Vec3::new(ix as f64 + 0.5, iy as f64 + 0.5, iz as f64 + 0.5);
                    out.push((t.origin + p * t.cell, *w));
                }
            }
            out
        } else {
            Vec::new()
        }
    }
}

/// Radial profile `rho(r)` of a symmetric density.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum RadialProfile {
    Uniform { radius: f64, value: f64 },
    Gaussian { sigma: f64, cutoff: f64, norm: f64 },
}

impl RadialProfile {
    pub fn value(&self, r: f64) -> f64 {
        match *self {
            RadialProfile::Uniform { radius, value } => {
                if r <= radius {
                    value
                } else {
                    0.0
                }
            }
            RadialProfile::Gaussian {
                sigma,
                cutoff,
                norm,
            } => {
                if r <= cutoff {
                    norm * libm::exp(-0.5 * r * r / (sigma * sigma))
                } else {
                    0.0
                }
            }
        }
    }

    /// Radius beyond which the profile vanishes.
    pub fn support(&self) -> f64 {
        match *self {
            RadialProfile::Uniform { radius, .. } => radius,
            RadialProfile::Gaussian { cutoff, .. } => cutoff,
        }
    }
}
