//! Free-space Stokes kernels, their derivatives, and the smooth near-field cutoff.

use core::f64::consts::PI;

use crate::error::{check_finite, Error, Result};
use crate::linalg::{Mat3, Tensor3, Tensor4, Vec3};

const INV_8PI: f64 = 1.0 / (8.0 * PI);

/// Oseen tensor `(I/|x| + x x^T/|x|^3) / (8 pi)`.
pub fn oseen_tensor(x: Vec3) -> Result<Mat3> {
    let r2 = checked_r2(x)?;
    Ok(oseen_unchecked(x, libm::sqrt(r2)))
}

/// Pressure vector `x / (4 pi |x|^3)`.
pub fn oseen_pressure(x: Vec3) -> Result<Vec3> {
    let r2 = checked_r2(x)?;
    let r = libm::sqrt(r2);
    Ok(x * (1.0 / (4.0 * PI * r2 * r)))
}

/// First derivatives of the Oseen tensor, `t[i][j][k] = d_k Phi_ij`.
pub fn oseen_gradient(x: Vec3) -> Result<Tensor3> {
    let r2 = checked_r2(x)?;
    Ok(oseen_gradient_reg(x, r2))
}

/// Second derivatives of the Oseen tensor, `t[i][j][k][l] = d_k d_l Phi_ij`.
pub fn oseen_hessian(x: Vec3) -> Result<Tensor4> {
    let r2 = checked_r2(x)?;
    let r = libm::sqrt(r2);
    let inv3 = 1.0 / (r2 * r);
    let inv5 = inv3 / r2;
    let inv7 = inv5 / r2;
    let d = |a: usize, b: usize| if a == b { 1.0 } else { 0.0 };
    let x = x.0;
    let mut t = [[[[0.0; 3]; 3]; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            for k in 0..3 {
                for l in 0..3 {
                    let v = -d(i, j) * (d(k, l) * inv3 - 3.0 * x[k] * x[l] * inv5)
                        + (d(i, k) * d(j, l) + d(j, k) * d(i, l)) * inv3
                        - 3.0 * (d(i, k) * x[j] + d(j, k) * x[i]) * x[l] * inv5
                        - 3.0
                            * (d(i, l) * x[j] * x[k]
                                + d(j, l) * x[i] * x[k]
                                + d(k, l) * x[i] * x[j])
                            * inv5
                        + 15.0 * x[i] * x[j] * x[k] * x[l] * inv7;
                    t[i][j][k][l] = INV_8PI * v;
                }
            }
        }
    }
    Ok(t)
}

/// Derivative of requested order.
#[derive(Clone, Debug, PartialEq)]
#[allow(clippy::large_enum_variant)]
pub enum OseenDerivative {
    First(Tensor3),
    Second(Tensor4),
}

/// Analytic derivative of the Oseen tensor of order 1 or 2.
pub fn oseen_derivative(x: Vec3, order: u8) -> Result<OseenDerivative> {
    match order {
        1 => oseen_gradient(x).map(OseenDerivative::First),
        2 => oseen_hessian(x).map(OseenDerivative::Second),
        _ => Err(Error::InvalidParameter {
            name: "order",
            reason: alloc::format!("supported orders are 1 and 2, got {order}"),
        }),
    }
}

/// Regularized Oseen tensor with `|x|` replaced by `sqrt(|x|^2 + delta^2)`.
pub fn oseen_blob(x: Vec3, delta: f64) -> Mat3 {
    let s2 = x.norm_sq() + delta * delta;
    oseen_unchecked(x, libm::sqrt(s2))
}

/// Gradient of [`oseen_blob`], `t[i][j][k] = d_k`.
pub fn oseen_blob_gradient(x: Vec3, delta: f64) -> Tensor3 {
    oseen_gradient_reg(x, x.norm_sq() + delta * delta)
}

fn checked_r2(x: Vec3) -> Result<f64> {
    check_finite(x, "kernel argument")?;
    let r2 = x.norm_sq();
    if r2 == 0.0 {
        return Err(Error::Singular);
    }
    Ok(r2)
}

#[inline]
fn oseen_unchecked(x: Vec3, r: f64) -> Mat3 {
    let a = INV_8PI / r;
    let b = INV_8PI / (r * r * r);
    let x = x.0;
    let mut m = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            m[i][j] = b * x[i] * x[j];
        }
        m[i][i] += a;
    }
    Mat3(m)
}

/// Gradient formula with `s2` standing in for `|x|^2`.
#[inline]
fn oseen_gradient_reg(x: Vec3, s2: f64) -> Tensor3 {
    let s = libm::sqrt(s2);
    let inv3 = INV_8PI / (s2 * s);
    let inv5 = 3.0 * inv3 / s2;
    let x = x.0;
    let mut t = [[[0.0; 3]; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            for k in 0..3 {
                let mut v = -inv5 * x[i] * x[j] * x[k];
                if i == j {
                    v -= inv3 * x[k];
                }
                if i == k {
                    v += inv3 * x[j];
                }
                if j == k {
                    v += inv3 * x[i];
                }
                t[i][j][k] = v;
            }
        }
    }
    t
}

/// Smooth switch from 0 to 1 on `(inner, outer)`, radii in units of the minimal distance.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CutoffSpec {
    pub inner: f64,
    pub outer: f64,
}

impl Default for CutoffSpec {
    fn default() -> Self {
        CutoffSpec {
            inner: 0.25,
            outer: 0.5,
        }
    }
}

impl CutoffSpec {
    pub fn new(inner: f64, outer: f64) -> Result<Self> {
        if !(inner.is_finite() && outer.is_finite() && inner >= 0.0 && outer > inner) {
            return Err(Error::InvalidParameter {
                name: "cutoff",
                reason: alloc::format!("need 0 <= inner < outer, got ({inner}, {outer})"),
            });
        }
        Ok(CutoffSpec { inner, outer })
    }

    /// Value of the switch at scaled radius `t`.
    pub fn chi(&self, t: f64) -> f64 {
        if t <= self.inner {
            0.0
        } else if t >= self.outer {
            1.0
        } else {
            let s = (t - self.inner) / (self.outer - self.inner);
            s * s * (3.0 - 2.0 * s)
        }
    }

    /// Derivative of [`CutoffSpec::chi`] with respect to `t`.
    pub fn chi_prime(&self, t: f64) -> f64 {
        if t <= self.inner || t >= self.outer {
            0.0
        } else {
            let w = self.outer - self.inner;
            let s = (t - self.inner) / w;
            6.0 * s * (1.0 - s) / w
        }
    }
}

/// `chi(|x| / d_min) Phi(x)`; exactly zero inside the inner radius.
pub fn truncated_oseen(x: Vec3, d_min: f64, cutoff: &CutoffSpec) -> Result<Mat3> {
    check_finite(x, "kernel argument")?;
    if !(d_min.is_finite() && d_min > 0.0) {
        return Err(Error::InvalidParameter {
            name: "d_min",
            reason: alloc::format!("must be finite and positive, got {d_min}"),
        });
    }
    let r = x.norm();
    let t = r / d_min;
    if t <= cutoff.inner {
        return Ok(Mat3::ZERO);
    }
    Ok(oseen_unchecked(x, r).scale(cutoff.chi(t)))
}

/// Gradient of [`truncated_oseen`] including the derivative of the switch.
pub fn truncated_oseen_gradient(x: Vec3, d_min: f64, cutoff: &CutoffSpec) -> Result<Tensor3> {
    check_finite(x, "kernel argument")?;
    let r2 = x.norm_sq();
    let r = libm::sqrt(r2);
    let t = r / d_min;
    if t <= cutoff.inner {
        return Ok([[[0.0; 3]; 3]; 3]);
    }
    let chi = cutoff.chi(t);
    let mut g = oseen_gradient_reg(x, r2);
    for row in g.iter_mut() {
        for col in row.iter_mut() {
            for v in col.iter_mut() {
                *v *= chi;
            }
        }
    }
    let dchi = cutoff.chi_prime(t);
    if dchi != 0.0 {
        let phi = oseen_unchecked(x, r);
        let c = dchi / (r * d_min);
        for i in 0..3 {
            for j in 0..3 {
                for k in 0..3 {
                    g[i][j][k] += c * x.0[k] * phi.0[i][j];
                }
            }
        }
    }
    Ok(g)
}

/// Step used by the finite-difference consistency checks.
pub fn fd_step(x: Vec3) -> f64 {
    1e-4 * x.norm().max(1.0)
}
