//! Mesoscopic descriptions: a kinetic particle ensemble carrying orientations, and a density
//! ensemble transported together with a gridded orientation field `F(t, x)`.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::density::{DensitySpec, RadialProfile};
use crate::error::{check_finite, check_positive, Error, Result};
use crate::linalg::{Mat3, Vec3};
use crate::pair::settling_velocity;
use crate::quadrature::Rule;

/// A weighted particle with an orientation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MesoParticle {
    pub x: Vec3,
    pub xi: Vec3,
    pub weight: f64,
}

/// Regularization length of the blob kernel.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BlobSpec {
    pub delta: f64,
}

/// Map from orientation to settling velocity.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum SettlingLaw {
    /// Isolated pair settling, `(I + a2(xi)) kappa g`.
    #[default]
    PairClosure,
    /// Orientation-independent settling at `kappa g`.
    Isotropic,
}

impl SettlingLaw {
    pub fn velocity(&self, xi: Vec3, kappa_g: Vec3) -> Result<Vec3> {
        match self {
            SettlingLaw::PairClosure => settling_velocity(xi, kappa_g),
            SettlingLaw::Isotropic => Ok(kappa_g),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MesoParams {
    pub r0: f64,
    pub kappa_g: Vec3,
    pub blob: BlobSpec,
    pub law: SettlingLaw,
}

impl MesoParams {
    pub fn validate(&self) -> Result<()> {
        check_positive(self.r0, "r0")?;
        check_finite(self.kappa_g, "kappa_g")?;
        check_positive(self.blob.delta, "blob.delta")
    }
}

/// Blob-regularized field `6 pi r0 sum_k w_k Phi_delta(x - x_k) kappa g`.
pub fn continuous_k(particles: &[MesoParticle], params: &MesoParams, x: Vec3) -> Vec3 {
    blob_field(particles, params, x, false).0
}

/// Gradient of [`continuous_k`], entry `(i, k)` is `d_k u_i`.
pub fn continuous_k_gradient(particles: &[MesoParticle], params: &MesoParams, x: Vec3) -> Mat3 {
    blob_field(particles, params, x, true).1
}

fn blob_field(
    particles: &[MesoParticle],
    params: &MesoParams,
    x: Vec3,
    with_gradient: bool,
) -> (Vec3, Mat3) {
    let f = params.kappa_g;
    let d2 = params.blob.delta * params.blob.delta;
    let mut u = Vec3::ZERO;
    let mut g = [[0.0; 3]; 3];
    for p in particles {
        let d = x - p.x;
        let s2 = d.norm_sq() + d2;
        let inv_s = 1.0 / libm::sqrt(s2);
        let inv_s3 = inv_s / s2;
        let df = d.dot(f);
        u += (f * inv_s + d * (df * inv_s3)) * p.weight;
        if with_gradient {
            let w3 = p.weight * inv_s3;
            let w5 = 3.0 * w3 / s2;
            for i in 0..3 {
                for k in 0..3 {
                    let mut v = (d[i] * f[k] - f[i] * d[k]) * w3 - w5 * d[i] * df * d[k];
                    if i == k {
                        v += df * w3;
                    }
                    g[i][k] += v;
                }
            }
        }
    }
    let s = 6.0 * PI * params.r0 / (8.0 * PI);
    (u * s, Mat3(g).scale(s))
}

/// A stationary velocity field with its gradient (`d_k u_i` at entry `(i, k)`).
pub trait FlowField {
    fn velocity(&self, x: Vec3) -> Result<Vec3>;
    fn gradient(&self, x: Vec3) -> Result<Mat3>;

    fn eval(&self, x: Vec3) -> Result<(Vec3, Mat3)> {
        Ok((self.velocity(x)?, self.gradient(x)?))
    }
}

/// `u(x) = G x`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LinearFlow {
    pub g: Mat3,
}

impl FlowField for LinearFlow {
    fn velocity(&self, x: Vec3) -> Result<Vec3> {
        Ok(self.g * x)
    }
    fn gradient(&self, _x: Vec3) -> Result<Mat3> {
        Ok(self.g)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct ZeroFlow;

impl FlowField for ZeroFlow {
    fn velocity(&self, _x: Vec3) -> Result<Vec3> {
        Ok(Vec3::ZERO)
    }
    fn gradient(&self, _x: Vec3) -> Result<Mat3> {
        Ok(Mat3::ZERO)
    }
}

/// Blob field generated by a fixed ensemble.
#[derive(Clone, Debug, PartialEq)]
pub struct BlobFlow {
    pub particles: Vec<MesoParticle>,
    pub params: MesoParams,
}

impl FlowField for BlobFlow {
    fn velocity(&self, x: Vec3) -> Result<Vec3> {
        Ok(continuous_k(&self.particles, &self.params, x))
    }
    fn gradient(&self, x: Vec3) -> Result<Mat3> {
        Ok(continuous_k_gradient(&self.particles, &self.params, x))
    }
    fn eval(&self, x: Vec3) -> Result<(Vec3, Mat3)> {
        Ok(blob_field(&self.particles, &self.params, x, true))
    }
}

/// Exact convolution `6 pi r0 (Phi * rho) kappa g` for a radially symmetric density,
/// evaluated through one-dimensional radial moments.
#[derive(Clone, Debug)]
pub struct RadialConvolution {
    center: Vec3,
    profile: RadialProfile,
    r0: f64,
    kappa_g: Vec3,
    rule: Rule,
}

struct Moments {
    psi: f64,
    dpsi: f64,
    c1: f64,
    c2: f64,
    c3: f64,
}

impl RadialConvolution {
    pub fn new(rho: &DensitySpec, r0: f64, kappa_g: Vec3) -> Result<Self> {
        let (center, profile) = rho.radial().ok_or(Error::InvalidParameter {
            name: "rho",
            reason: "density is not radially symmetric".into(),
        })?;
        Ok(RadialConvolution {
            center,
            profile,
            r0,
            kappa_g,
            rule: Rule::new(40),
        })
    }

    fn moments(&self, r: f64) -> Moments {
        let a = self.profile.support();
        let p = &self.profile;
        let ri = r.min(a);
        let m0 = 4.0 * PI * self.rule.integrate(0.0, ri, |s| p.value(s) * s * s);
        let m2 = 4.0 * PI * self.rule.integrate(0.0, ri, |s| p.value(s) * s * s * s * s);
        let o1 = 4.0 * PI * self.rule.integrate(r, a, |s| p.value(s) * s);
        let r2 = r * r;
        Moments {
            psi: m0 / r + o1,
            dpsi: -m0 / r2,
            c1: m0 - m2 / (3.0 * r2) + 2.0 * r * o1 / 3.0,
            c2: 2.0 * m2 / (3.0 * r2 * r) + 2.0 * o1 / 3.0,
            c3: -2.0 * m2 / (r2 * r2),
        }
    }
}

impl FlowField for RadialConvolution {
    fn velocity(&self, x: Vec3) -> Result<Vec3> {
        Ok(self.eval(x)?.0)
    }
    fn gradient(&self, x: Vec3) -> Result<Mat3> {
        Ok(self.eval(x)?.1)
    }
    fn eval(&self, x: Vec3) -> Result<(Vec3, Mat3)> {
        check_finite(x, "evaluation point")?;
        let f = self.kappa_g;
        let pre = 0.75 * self.r0;
        let d = x - self.center;
        let r = d.norm();
        let a = self.profile.support();
        if r < 1e-12 * a {
            let o1 = 4.0 * PI * self.rule.integrate(0.0, a, |s| self.profile.value(s) * s);
            return Ok((f * (pre * 4.0 / 3.0 * o1), Mat3::ZERO));
        }
        let m = self.moments(r);
        let n = d * (1.0 / r);
        let nf = n.dot(f);
        // Hessian of the radial potential |x - y| * rho applied to f.
        let dd = m.c2 - m.c1 / r;
        let hf = f * (m.c1 / r) + n * (dd * nf);
        let u = (f * (2.0 * m.psi) - hf) * pre;
        let ddp = m.c3 - dd / r;
        let mut g = [[0.0; 3]; 3];
        for i in 0..3 {
            for k in 0..3 {
                let mut dh = (dd / r) * n[k] * f[i]
                    + ddp * n[k] * n[i] * nf
                    + (dd / r) * (f[k] * n[i] - 2.0 * n[i] * n[k] * nf);
                if i == k {
                    dh += (dd / r) * nf;
                }
                g[i][k] = pre * (2.0 * m.dpsi * n[k] * f[i] - dh);
            }
        }
        Ok((u, Mat3(g)))
    }
}

/// Source of the ambient flow during a mesoscopic step.
#[derive(Clone, Copy)]
pub enum Drive<'a> {
    /// Blob field of the current ensemble.
    SelfConsistent,
    /// A prescribed field, ignoring the ensemble.
    Prescribed(&'a dyn FlowField),
}

fn drive_eval(
    drive: Drive<'_>,
    particles: &[MesoParticle],
    params: &MesoParams,
    x: Vec3,
) -> Result<(Vec3, Mat3)> {
    match drive {
        Drive::SelfConsistent => Ok(blob_field(particles, params, x, true)),
        Drive::Prescribed(flow) => flow.eval(x),
    }
}

fn kinetic_rates(
    particles: &[MesoParticle],
    params: &MesoParams,
    drive: Drive<'_>,
) -> Result<Vec<(Vec3, Vec3)>> {
    particles
        .iter()
        .map(|p| {
            let (u, g) = drive_eval(drive, particles, params, p.x)?;
            Ok((params.law.velocity(p.xi, params.kappa_g)? + u, g * p.xi))
        })
        .collect()
}

/// RK4 step of the kinetic ensemble: `x' = law(xi) kappa g + u(x)`, `xi' = grad u(x) xi`.
pub fn step_meso_kinetic(
    particles: &[MesoParticle],
    params: &MesoParams,
    dt: f64,
    drive: Drive<'_>,
) -> Result<Vec<MesoParticle>> {
    params.validate()?;
    check_positive(dt, "dt")?;
    let shift = |k: &[(Vec3, Vec3)], h: f64| -> Vec<MesoParticle> {
        particles
            .iter()
            .zip(k)
            .map(|(p, (vx, vxi))| MesoParticle {
                x: p.x + *vx * h,
                xi: p.xi + *vxi * h,
                weight: p.weight,
            })
            .collect()
    };
    let k1 = kinetic_rates(particles, params, drive)?;
    let k2 = kinetic_rates(&shift(&k1, 0.5 * dt), params, drive)?;
    let k3 = kinetic_rates(&shift(&k2, 0.5 * dt), params, drive)?;
    let k4 = kinetic_rates(&shift(&k3, dt), params, drive)?;
    let mut out = Vec::with_capacity(particles.len());
    for i in 0..particles.len() {
        let p = particles[i];
        let vx = (k1[i].0 + (k2[i].0 + k3[i].0) * 2.0 + k4[i].0) * (dt / 6.0);
        let vxi = (k1[i].1 + (k2[i].1 + k3[i].1) * 2.0 + k4[i].1) * (dt / 6.0);
        let q = MesoParticle {
            x: p.x + vx,
            xi: p.xi + vxi,
            weight: p.weight,
        };
        if !q.x.is_finite() || !q.xi.is_finite() {
            return Err(Error::BlowUp {
                time: dt,
                reason: "non-finite mesoscopic particle".into(),
            });
        }
        out.push(q);
    }
    Ok(out)
}

/// `m` equal-weight samples of `rho` with a deterministic generator.
pub fn sample_density(rho: &DensitySpec, m: usize, seed: u64) -> Result<Vec<Vec3>> {
    rho.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(rho.sample_n(m, &mut rng))
}

/// Interpolation used when sampling a gridded field.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Interp {
    #[default]
    Trilinear,
    /// Four-point Lagrange interpolation per axis.
    Tricubic,
}

/// Behavior when a gridded field is sampled outside its box.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum OutsidePolicy {
    Error,
    /// Constant extension from the nearest boundary point.
    #[default]
    Clamp,
}

/// Uniform node grid.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GridSpec {
    pub origin: Vec3,
    pub spacing: [f64; 3],
    pub dims: [usize; 3],
}

impl GridSpec {
    /// Grid with `dims` nodes spanning `[lo, hi]`.
    pub fn spanning(lo: Vec3, hi: Vec3, dims: [usize; 3]) -> Result<Self> {
        if dims.iter().any(|d| *d < 2) {
            return Err(Error::InvalidParameter {
                name: "grid",
                reason: format!("need at least two nodes per axis, got {dims:?}"),
            });
        }
        let spacing = [0, 1, 2].map(|a| (hi[a] - lo[a]) / (dims[a] - 1) as f64);
        if spacing.iter().any(|h| !(h.is_finite() && *h > 0.0)) {
            return Err(Error::InvalidParameter {
                name: "grid",
                reason: "box must have positive extent".into(),
            });
        }
        Ok(GridSpec {
            origin: lo,
            spacing,
            dims,
        })
    }

    pub fn len(&self) -> usize {
        self.dims[0] * self.dims[1] * self.dims[2]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.dims[0] * (j + self.dims[1] * k)
    }

    pub fn node(&self, n: usize) -> Vec3 {
        let i = n % self.dims[0];
        let j = (n / self.dims[0]) % self.dims[1];
        let k = n / (self.dims[0] * self.dims[1]);
        Vec3::new(
            self.origin[0] + i as f64 * self.spacing[0],
            self.origin[1] + j as f64 * self.spacing[1],
            self.origin[2] + k as f64 * self.spacing[2],
        )
    }

    pub fn upper(&self) -> Vec3 {
        self.node(self.len() - 1)
    }

    /// Whether `x` lies in the box up to a relative slack of `1e-12` cells.
    pub fn contains(&self, x: Vec3) -> bool {
        (0..3).all(|a| {
            let t = (x[a] - self.origin[a]) / self.spacing[a];
            t >= -1e-12 && t <= (self.dims[a] - 1) as f64 + 1e-12
        })
    }
}

/// Orientation field sampled on a uniform grid.
#[derive(Clone, Debug, PartialEq)]
pub struct FField {
    pub grid: GridSpec,
    pub values: Vec<Vec3>,
    pub interp: Interp,
    pub outside: OutsidePolicy,
}

impl FField {
    pub fn from_fn(grid: GridSpec, f: impl Fn(Vec3) -> Vec3) -> Self {
        let values = (0..grid.len()).map(|n| f(grid.node(n))).collect();
        FField {
            grid,
            values,
            interp: Interp::default(),
            outside: OutsidePolicy::default(),
        }
    }

    pub fn with_interp(mut self, interp: Interp) -> Self {
        self.interp = interp;
        self
    }

    pub fn with_outside(mut self, outside: OutsidePolicy) -> Self {
        self.outside = outside;
        self
    }

    /// Interpolated value at `x`.
    pub fn sample(&self, x: Vec3) -> Result<Vec3> {
        if !x.is_finite() {
            return Err(Error::NonFinite("sample point"));
        }
        if self.outside == OutsidePolicy::Error && !self.grid.contains(x) {
            return Err(Error::OutOfDomain { point: x });
        }
        let g = &self.grid;
        let t = [0, 1, 2].map(|a| {
            ((x[a] - g.origin[a]) / g.spacing[a]).clamp(0.0, (g.dims[a] - 1) as f64)
        });
        Ok(match self.interp {
            Interp::Trilinear => self.trilinear(t),
            Interp::Tricubic => {
                if g.dims.iter().all(|d| *d >= 4) {
                    self.tricubic(t)
                } else {
                    self.trilinear(t)
                }
            }
        })
    }

    fn trilinear(&self, t: [f64; 3]) -> Vec3 {
        let g = &self.grid;
        let mut base = [0usize; 3];
        let mut w = [[0.0; 2]; 3];
        for a in 0..3 {
            let i = (libm::floor(t[a]) as usize).min(g.dims[a] - 2);
            let s = t[a] - i as f64;
            base[a] = i;
            w[a] = [1.0 - s, s];
        }
        let mut v = Vec3::ZERO;
        for dz in 0..2 {
            for dy in 0..2 {
                for dx in 0..2 {
                    let c = w[0][dx] * w[1][dy] * w[2][dz];
                    if c != 0.0 {
                        v += self.values[g.index(base[0] + dx, base[1] + dy, base[2] + dz)] * c;
                    }
                }
            }
        }
        v
    }

    fn tricubic(&self, t: [f64; 3]) -> Vec3 {
        let g = &self.grid;
        let mut base = [0usize; 3];
        let mut w = [[0.0; 4]; 3];
        for a in 0..3 {
            let i = (libm::floor(t[a]) as isize).clamp(1, g.dims[a] as isize - 3) as usize;
            let s = t[a] - i as f64;
            base[a] = i - 1;
            // Lagrange basis on nodes -1, 0, 1, 2.
            w[a] = [
                -s * (s - 1.0) * (s - 2.0) / 6.0,
                (s + 1.0) * (s - 1.0) * (s - 2.0) / 2.0,
                -(s + 1.0) * s * (s - 2.0) / 2.0,
                (s + 1.0) * s * (s - 1.0) / 6.0,
            ];
        }
        let mut v = Vec3::ZERO;
        for dz in 0..4 {
            for dy in 0..4 {
                let wyz = w[1][dy] * w[2][dz];
                for dx in 0..4 {
                    v += self.values[g.index(base[0] + dx, base[1] + dy, base[2] + dz)]
                        * (w[0][dx] * wyz);
                }
            }
        }
        v
    }

    /// Centered finite-difference gradient of the interpolant, entry `(i, k)` is `d_k F_i`.
    pub fn gradient_fd(&self, x: Vec3) -> Result<Mat3> {
        let mut cols = [Vec3::ZERO; 3];
        for (k, col) in cols.iter_mut().enumerate() {
            let h = 0.5 * self.grid.spacing[k];
            let mut e = Vec3::ZERO;
            e[k] = h;
            *col = (self.sample(x + e)? - self.sample(x - e)?) * (0.5 / h);
        }
        Ok(Mat3::from_columns(cols))
    }

    /// Largest nodal difference to another field on the same grid.
    pub fn max_diff(&self, other: &FField) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .fold(0.0, |m, (a, b)| m.max((*a - *b).norm()))
    }
}

/// Splitting order of the coupled density/orientation step.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum SplitOrder {
    /// Euler foot point and explicit source.
    #[default]
    First,
    /// Midpoint foot point and trapezoidal source.
    Second,
}

/// Velocity field and gradient tabulated on a grid and interpolated like an [`FField`].
#[derive(Clone, Debug, PartialEq)]
pub struct GriddedFlow {
    u: FField,
    cols: [FField; 3],
}

impl GriddedFlow {
    pub fn tabulate(grid: GridSpec, interp: Interp, flow: &dyn FlowField) -> Result<Self> {
        let mut u = Vec::with_capacity(grid.len());
        let mut cols = [Vec::new(), Vec::new(), Vec::new()];
        for n in 0..grid.len() {
            let (v, g) = flow.eval(grid.node(n))?;
            u.push(v);
            for (k, c) in cols.iter_mut().enumerate() {
                c.push(g.column(k));
            }
        }
        let wrap = |values: Vec<Vec3>| FField {
            grid,
            values,
            interp,
            outside: OutsidePolicy::Clamp,
        };
        let [c0, c1, c2] = cols;
        Ok(GriddedFlow {
            u: wrap(u),
            cols: [wrap(c0), wrap(c1), wrap(c2)],
        })
    }
}

impl FlowField for GriddedFlow {
    fn velocity(&self, x: Vec3) -> Result<Vec3> {
        self.u.sample(x)
    }
    fn gradient(&self, x: Vec3) -> Result<Mat3> {
        Ok(Mat3::from_columns([
            self.cols[0].sample(x)?,
            self.cols[1].sample(x)?,
            self.cols[2].sample(x)?,
        ]))
    }
}

/// One step of the coupled system: ensemble particles move with
/// `law(F(x)) kappa g + u(x)`, and `F` is advected by the same field with source `grad u F`.
/// The flow and `F` are frozen at the start of the step; a self-consistent flow is tabulated on
/// the grid of `F` and interpolated.
pub fn step_meso_correlated(
    particles: &[MesoParticle],
    f: &FField,
    params: &MesoParams,
    dt: f64,
    split: SplitOrder,
    drive: Drive<'_>,
) -> Result<(Vec<MesoParticle>, FField)> {
    params.validate()?;
    check_positive(dt, "dt")?;
    let tabulated;
    let drive = match drive {
        Drive::SelfConsistent => {
            let blob = BlobFlow {
                particles: particles.to_vec(),
                params: *params,
            };
            tabulated = GriddedFlow::tabulate(f.grid, f.interp, &blob)?;
            Drive::Prescribed(&tabulated)
        }
        d => d,
    };
    let vel = |y: Vec3| -> Result<(Vec3, Mat3)> {
        let fy = f.sample(y)?;
        let (u, g) = drive_eval(drive, particles, params, y)?;
        Ok((params.law.velocity(fy, params.kappa_g)? + u, g))
    };
    let mut moved = Vec::with_capacity(particles.len());
    for p in particles {
        let (v0, _) = vel(p.x)?;
        let x = match split {
            SplitOrder::First => p.x + v0 * dt,
            SplitOrder::Second => p.x + vel(p.x + v0 * (0.5 * dt))?.0 * dt,
        };
        if !x.is_finite() {
            return Err(Error::BlowUp {
                time: dt,
                reason: "non-finite mesoscopic particle".into(),
            });
        }
        moved.push(MesoParticle {
            x,
            xi: p.xi,
            weight: p.weight,
        });
    }
    let mut values = Vec::with_capacity(f.values.len());
    for n in 0..f.grid.len() {
        let x = f.grid.node(n);
        let (v0, g_here) = vel(x)?;
        let fnew = match split {
            SplitOrder::First => {
                let y = x - v0 * dt;
                let fy = f.sample(y)?;
                let (_, gy) = drive_eval(drive, particles, params, y)?;
                fy + (gy * fy) * dt
            }
            SplitOrder::Second => {
                let ym = x - v0 * (0.5 * dt);
                let y = x - vel(ym)?.0 * dt;
                let fy = f.sample(y)?;
                let (_, gy) = drive_eval(drive, particles, params, y)?;
                let rhs = fy + (gy * fy) * (0.5 * dt);
                let lhs = Mat3::IDENTITY - g_here.scale(0.5 * dt);
                lhs.inverse()
                    .ok_or(Error::BlowUp {
                        time: dt,
                        reason: "singular trapezoidal update".into(),
                    })?
                    * rhs
            }
        };
        if !fnew.is_finite() {
            return Err(Error::BlowUp {
                time: dt,
                reason: "non-finite orientation field".into(),
            });
        }
        values.push(fnew);
    }
    let fnext = FField {
        grid: f.grid,
        values,
        interp: f.interp,
        outside: f.outside,
    };
    for p in moved.iter_mut() {
        p.xi = fnext.sample(p.x)?;
    }
    Ok((moved, fnext))
}

/// Options of the fixed-point solver for `F` with a frozen flow.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PicardOptions {
    pub t_end: f64,
    /// Number of time levels after the initial one.
    pub steps: usize,
    pub tol: f64,
    pub max_iter: usize,
}

/// Orientation field at every time level and the fixed-point history.
#[derive(Clone, Debug, PartialEq)]
pub struct PicardSolution {
    pub levels: Vec<FField>,
    /// Sup-norm change of each iterate over all levels and nodes.
    pub increments: Vec<f64>,
    /// Applications of the map before the fixed point was reached; a final application
    /// confirms it.
    pub iterations: usize,
}

impl PicardSolution {
    pub fn last(&self) -> &FField {
        self.levels.last().expect("at least one level")
    }
}

/// Fixed point of `F -> F0(X(0)) + int grad u(X) F ds` along characteristics of
/// `law(F) kappa g + u`.
///
/// Each iterate traces every node back to time zero with RK4 steps of the level spacing,
/// interpolating the previous iterate linearly in time between levels.
pub fn picard_solve_f(
    f0: &FField,
    flow: &dyn FlowField,
    law: SettlingLaw,
    kappa_g: Vec3,
    opts: &PicardOptions,
) -> Result<PicardSolution> {
    check_positive(opts.t_end, "t_end")?;
    check_finite(kappa_g, "kappa_g")?;
    if opts.steps == 0 {
        return Err(Error::InvalidParameter {
            name: "steps",
            reason: "need at least one time level".into(),
        });
    }
    let dt = opts.t_end / opts.steps as f64;
    let mut levels = vec![f0.clone(); opts.steps + 1];
    let mut increments = Vec::new();
    let mut growth = 0;
    for it in 1..=opts.max_iter {
        let next = picard_map(f0, &levels, flow, law, kappa_g, dt)?;
        let inc = next
            .iter()
            .zip(&levels)
            .fold(0.0f64, |m, (a, b)| m.max(a.max_diff(b)));
        if !inc.is_finite() {
            return Err(Error::NonConvergence {
                iterations: it,
                history: increments,
            });
        }
        increments.push(inc);
        levels = next;
        if inc < opts.tol {
            return Ok(PicardSolution {
                levels,
                increments,
                iterations: it - 1,
            });
        }
        let k = increments.len();
        if k >= 2 && increments[k - 1] >= increments[k - 2] {
            growth += 1;
            if growth >= 3 {
                return Err(Error::NonConvergence {
                    iterations: it,
                    history: increments,
                });
            }
        } else {
            growth = 0;
        }
    }
    Err(Error::NonConvergence {
        iterations: opts.max_iter,
        history: increments,
    })
}

fn picard_map(
    f0: &FField,
    levels: &[FField],
    flow: &dyn FlowField,
    law: SettlingLaw,
    kappa_g: Vec3,
    dt: f64,
) -> Result<Vec<FField>> {
    let last = levels.len() - 1;
    let at = |s: f64, y: Vec3| -> Result<Vec3> {
        let q = (s / dt).clamp(0.0, last as f64);
        let m = (libm::floor(q) as usize).min(last.saturating_sub(1));
        let th = q - m as f64;
        let a = levels[m].sample(y)?;
        if th == 0.0 || last == 0 {
            return Ok(a);
        }
        let b = levels[m + 1].sample(y)?;
        Ok(a * (1.0 - th) + b * th)
    };
    let rhs = |s: f64, y: Vec3| -> Result<(Vec3, Vec3)> {
        let fy = at(s, y)?;
        let (u, g) = flow.eval(y)?;
        Ok((law.velocity(fy, kappa_g)? + u, -(g * fy)))
    };
    let mut out = Vec::with_capacity(levels.len());
    out.push(f0.clone());
    for n in 1..levels.len() {
        let mut values = Vec::with_capacity(f0.values.len());
        for node in 0..f0.grid.len() {
            let mut x = f0.grid.node(node);
            let mut j = Vec3::ZERO;
            let mut s = n as f64 * dt;
            let h = -dt;
            for _ in 0..n {
                let k1 = rhs(s, x)?;
                let k2 = rhs(s + 0.5 * h, x + k1.0 * (0.5 * h))?;
                let k3 = rhs(s + 0.5 * h, x + k2.0 * (0.5 * h))?;
                let k4 = rhs(s + h, x + k3.0 * h)?;
                x += (k1.0 + (k2.0 + k3.0) * 2.0 + k4.0) * (h / 6.0);
                j += (k1.1 + (k2.1 + k3.1) * 2.0 + k4.1) * (h / 6.0);
                s += h;
            }
            values.push(f0.sample(x)? + j);
        }
        out.push(FField {
            grid: f0.grid,
            values,
            interp: f0.interp,
            outside: f0.outside,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn trilinear_reproduces_affine_fields() {
        let g = GridSpec::spanning(Vec3::new(-1.0, -1.0, -1.0), Vec3::new(1.0, 1.0, 1.0), [5, 6, 7])
            .unwrap();
        let aff = |x: Vec3| Vec3::new(1.0 + 2.0 * x[0] - x[2], x[1] * 0.5, 3.0 - x[0] + x[1]);
        let f = FField::from_fn(g, aff);
        let p = Vec3::new(0.13, -0.77, 0.41);
        assert!((f.sample(p).unwrap() - aff(p)).max_abs() < 1e-14);
        let c = f.clone().with_interp(Interp::Tricubic);
        assert!((c.sample(p).unwrap() - aff(p)).max_abs() < 1e-13);
    }

    #[test]
    fn outside_policy() {
        let g = GridSpec::spanning(Vec3::ZERO, Vec3::new(1.0, 1.0, 1.0), [3, 3, 3]).unwrap();
        let f = FField::from_fn(g, |x| x);
        let out = Vec3::new(1.5, 0.5, 0.5);
        assert_eq!(f.sample(out).unwrap(), Vec3::new(1.0, 0.5, 0.5));
        let e = f.with_outside(OutsidePolicy::Error);
        assert!(matches!(e.sample(out), Err(Error::OutOfDomain { .. })));
    }

    #[test]
    fn zero_flow_isotropic_picard_is_transport() {
        let g = GridSpec::spanning(Vec3::new(-1.0, -1.0, -1.0), Vec3::new(1.0, 1.0, 1.0), [5, 5, 5])
            .unwrap();
        let f0 = FField::from_fn(g, |x| Vec3::new(2.0 + x[2], 0.0, 1.0));
        let kg = Vec3::new(0.0, 0.0, -0.1);
        let opts = PicardOptions {
            t_end: 0.5,
            steps: 4,
            tol: 1e-13,
            max_iter: 10,
        };
        let s = picard_solve_f(&f0, &ZeroFlow, SettlingLaw::Isotropic, kg, &opts).unwrap();
        assert_eq!(s.iterations, 1);
        assert_eq!(s.increments.len(), 2);
        let p = Vec3::new(0.2, -0.3, 0.1);
        let exact = 2.0 + p[2] + 0.05;
        assert!((s.last().sample(p).unwrap()[0] - exact).abs() < 1e-13);
    }
}
