//! Particle dynamics of dilute pair clouds under the first-order velocity law.

use alloc::format;
use alloc::vec::Vec;
use core::f64::consts::PI;

use crate::error::{check_finite, check_positive, Error, Result};
use crate::kernels::CutoffSpec;
use crate::linalg::{Mat3, Vec3};
use crate::metrics::{dilution_report, min_distance, w_infinity_lower_bound, Flag, Thresholds};
use crate::pair::settling_velocity;

const INV_8PI: f64 = 1.0 / (8.0 * PI);

/// Physical parameters of a particle cloud.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MicroParams {
    /// Total sphere radius budget `r0 = 2 N R`.
    pub r0: f64,
    pub kappa_g: Vec3,
    pub cutoff: CutoffSpec,
}

impl MicroParams {
    pub fn validate(&self) -> Result<()> {
        check_positive(self.r0, "r0")?;
        check_finite(self.kappa_g, "kappa_g")
    }

    /// Sphere radius for `n` pairs.
    pub fn radius(&self, n: usize) -> f64 {
        self.r0 / (2.0 * n as f64)
    }
}

/// Positions and orientations of `N` pairs at one time.
#[derive(Clone, Debug, PartialEq)]
pub struct MicroState {
    pub time: f64,
    pub centers: Vec<Vec3>,
    pub xi: Vec<Vec3>,
}

impl MicroState {
    pub fn len(&self) -> usize {
        self.centers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centers.is_empty()
    }

    pub fn d_min(&self) -> f64 {
        min_distance(&self.centers)
    }

    fn validate(&self) -> Result<()> {
        if self.centers.len() != self.xi.len() {
            return Err(Error::InvalidParameter {
                name: "state",
                reason: format!("{} centers but {} orientations", self.centers.len(), self.xi.len()),
            });
        }
        if self.centers.is_empty() {
            return Err(Error::InvalidParameter {
                name: "state",
                reason: "no pairs".into(),
            });
        }
        Ok(())
    }
}

/// Value and gradient of the truncated kernel sum, `d_k u_i` in the gradient.
fn field_at(
    centers: &[Vec3],
    params: &MicroParams,
    d_min: f64,
    x: Vec3,
    with_gradient: bool,
) -> (Vec3, Mat3) {
    let f = params.kappa_g;
    let c = &params.cutoff;
    let inner = c.inner * d_min;
    let mut u = Vec3::ZERO;
    let mut g = [[0.0; 3]; 3];
    for y in centers {
        let d = x - *y;
        let r2 = d.norm_sq();
        let r = libm::sqrt(r2);
        if r <= inner {
            continue;
        }
        let t = r / d_min;
        let chi = c.chi(t);
        let inv_r = 1.0 / r;
        let inv_r3 = inv_r / r2;
        let df = d.dot(f);
        // Phi(d) f
        let pf = (f * inv_r + d * (df * inv_r3)) * INV_8PI;
        u += pf * chi;
        if with_gradient {
            let inv_r5 = inv_r3 / r2;
            let dchi = c.chi_prime(t) / (r * d_min);
            for i in 0..3 {
                for k in 0..3 {
                    let mut v = -f[i] * d[k] * inv_r3 + d[i] * f[k] * inv_r3
                        - 3.0 * d[i] * df * d[k] * inv_r5;
                    if i == k {
                        v += df * inv_r3;
                    }
                    g[i][k] += chi * INV_8PI * v + dchi * d[k] * pf[i];
                }
            }
        }
    }
    let s = 6.0 * PI * params.r0 / centers.len() as f64;
    (u * s, Mat3(g).scale(s))
}

/// Discrete field `(6 pi r0 / N) sum_j chi(|x - x_j| / d_min) Phi(x - x_j) kappa g`.
pub fn discrete_k(state: &MicroState, params: &MicroParams, d_min: f64, x: Vec3) -> Result<Vec3> {
    state.validate()?;
    check_finite(x, "evaluation point")?;
    check_positive(d_min, "d_min")?;
    Ok(field_at(&state.centers, params, d_min, x, false).0)
}

/// Gradient of [`discrete_k`], entry `(i, k)` is `d_k u_i`.
pub fn discrete_k_gradient(
    state: &MicroState,
    params: &MicroParams,
    d_min: f64,
    x: Vec3,
) -> Result<Mat3> {
    state.validate()?;
    check_finite(x, "evaluation point")?;
    check_positive(d_min, "d_min")?;
    Ok(field_at(&state.centers, params, d_min, x, true).1)
}

/// [`discrete_k`] and [`discrete_k_gradient`] from one pass over the pairs.
pub fn discrete_k_with_gradient(
    state: &MicroState,
    params: &MicroParams,
    d_min: f64,
    x: Vec3,
) -> Result<(Vec3, Mat3)> {
    state.validate()?;
    check_finite(x, "evaluation point")?;
    check_positive(d_min, "d_min")?;
    Ok(field_at(&state.centers, params, d_min, x, true))
}

/// Time derivatives of centers and orientations.
#[derive(Clone, Debug, PartialEq)]
pub struct Velocities {
    pub centers: Vec<Vec3>,
    pub xi: Vec<Vec3>,
    pub d_min: f64,
}

/// First-order law: isolated settling plus the truncated field for the centers, and the field
/// gradient applied to `xi` for the orientations.
pub fn first_order_velocities(state: &MicroState, params: &MicroParams) -> Result<Velocities> {
    state.validate()?;
    params.validate()?;
    let d_min = state.d_min();
    let n = state.len();
    let mut vc = Vec::with_capacity(n);
    let mut vx = Vec::with_capacity(n);
    if n == 1 {
        vc.push(settling_velocity(state.xi[0], params.kappa_g)?);
        vx.push(Vec3::ZERO);
        return Ok(Velocities {
            centers: vc,
            xi: vx,
            d_min,
        });
    }
    if !(d_min > 0.0) {
        return Err(Error::InvalidParameter {
            name: "centers",
            reason: "coincident pair centers".into(),
        });
    }
    for i in 0..n {
        let (u, g) = field_at(&state.centers, params, d_min, state.centers[i], true);
        vc.push(settling_velocity(state.xi[i], params.kappa_g)? + u);
        vx.push(g * state.xi[i]);
    }
    Ok(Velocities {
        centers: vc,
        xi: vx,
        d_min,
    })
}

/// Time integrator.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Scheme {
    Euler,
    #[default]
    Rk4,
}

fn axpy(s: &MicroState, v: &Velocities, h: f64) -> MicroState {
    MicroState {
        time: s.time + h,
        centers: s.centers.iter().zip(&v.centers).map(|(x, u)| *x + *u * h).collect(),
        xi: s.xi.iter().zip(&v.xi).map(|(x, u)| *x + *u * h).collect(),
    }
}

fn check_state(s: &MicroState) -> Result<()> {
    for (c, x) in s.centers.iter().zip(&s.xi) {
        if !c.is_finite() || !x.is_finite() {
            return Err(Error::BlowUp {
                time: s.time,
                reason: "non-finite state".into(),
            });
        }
        if x.norm() <= 1.0 {
            return Err(Error::BlowUp {
                time: s.time,
                reason: format!("pair spheres overlap (|xi| = {})", x.norm()),
            });
        }
    }
    Ok(())
}

/// Advance by `dt`; the minimal distance in the cutoff is recomputed at every stage.
pub fn step_micro(
    state: &MicroState,
    params: &MicroParams,
    dt: f64,
    scheme: Scheme,
) -> Result<MicroState> {
    check_positive(dt, "dt")?;
    let eval = |s: &MicroState| -> Result<Velocities> {
        check_state(s)?;
        first_order_velocities(s, params).map_err(|e| match e {
            Error::Overlap { norm } => Error::BlowUp {
                time: s.time,
                reason: format!("pair spheres overlap (|xi| = {norm})"),
            },
            other => other,
        })
    };
    let next = match scheme {
        Scheme::Euler => axpy(state, &eval(state)?, dt),
        Scheme::Rk4 => {
            let k1 = eval(state)?;
            let k2 = eval(&axpy(state, &k1, 0.5 * dt))?;
            let k3 = eval(&axpy(state, &k2, 0.5 * dt))?;
            let k4 = eval(&axpy(state, &k3, dt))?;
            let comb = |a: &[Vec3], b: &[Vec3], c: &[Vec3], d: &[Vec3], x: &[Vec3]| -> Vec<Vec3> {
                (0..x.len())
                    .map(|i| x[i] + (a[i] + (b[i] + c[i]) * 2.0 + d[i]) * (dt / 6.0))
                    .collect()
            };
            MicroState {
                time: state.time + dt,
                centers: comb(&k1.centers, &k2.centers, &k3.centers, &k4.centers, &state.centers),
                xi: comb(&k1.xi, &k2.xi, &k3.xi, &k4.xi, &state.xi),
            }
        }
    };
    check_state(&next)?;
    if next.len() > 1 && !(next.d_min() > 0.0) {
        return Err(Error::BlowUp {
            time: next.time,
            reason: "pair centers collided".into(),
        });
    }
    Ok(next)
}

/// Diagnostics stored with each snapshot.
#[derive(Clone, Debug, PartialEq)]
pub struct SnapshotDiagnostics {
    pub d_min: f64,
    /// Lower-bound proxy for the distance to the reference density.
    pub w_inf_proxy: f64,
    pub ratio2: f64,
    pub ratio3: f64,
    pub xi_min: f64,
    pub xi_max: f64,
    pub flags: Vec<Flag>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Snapshot {
    pub state: MicroState,
    pub diagnostics: SnapshotDiagnostics,
}

/// A hypothesis violation observed during a run.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Warning {
    pub time: f64,
    pub flag: Flag,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Trajectory {
    pub snapshots: Vec<Snapshot>,
    pub warnings: Vec<Warning>,
}

/// Settings of a particle run.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MicroRunConfig {
    pub params: MicroParams,
    pub dt: f64,
    pub t_end: f64,
    pub scheme: Scheme,
    /// Store every `save_every`-th step (the final state is always stored).
    pub save_every: usize,
    pub thresholds: Thresholds,
    /// Supremum of the reference density, used by the distance proxy.
    pub rho_inf: f64,
}

fn diagnostics(s: &MicroState, cfg: &MicroRunConfig) -> SnapshotDiagnostics {
    let w = w_infinity_lower_bound(s.len(), cfg.rho_inf);
    let r = dilution_report(&s.centers, &s.xi, w, &cfg.thresholds);
    SnapshotDiagnostics {
        d_min: r.d_min,
        w_inf_proxy: w,
        ratio2: r.ratio2,
        ratio3: r.ratio3,
        xi_min: r.xi_min,
        xi_max: r.xi_max,
        flags: r.flags,
    }
}

/// Integrate from `initial` to `t_end`; the last step is shortened to land on `t_end`.
pub fn run_micro(initial: MicroState, cfg: &MicroRunConfig) -> Result<Trajectory> {
    initial.validate()?;
    cfg.params.validate()?;
    check_positive(cfg.dt, "dt")?;
    check_positive(cfg.rho_inf, "rho_inf")?;
    if !(cfg.t_end.is_finite() && cfg.t_end >= initial.time) {
        return Err(Error::InvalidParameter {
            name: "t_end",
            reason: format!("must be finite and not before the start time, got {}", cfg.t_end),
        });
    }
    let span = cfg.t_end - initial.time;
    let steps = libm::ceil(span / cfg.dt - 1e-9).max(0.0) as usize;
    let every = cfg.save_every.max(1);
    let mut traj = Trajectory::default();
    let record = |s: &MicroState, traj: &mut Trajectory| {
        let d = diagnostics(s, cfg);
        for f in &d.flags {
            traj.warnings.push(Warning { time: s.time, flag: *f });
        }
        traj.snapshots.push(Snapshot {
            state: s.clone(),
            diagnostics: d,
        });
    };
    record(&initial, &mut traj);
    let mut state = initial;
    let t0 = state.time;
    for k in 1..=steps {
        let target = if k == steps { cfg.t_end } else { t0 + k as f64 * cfg.dt };
        let h = target - state.time;
        state = step_micro(&state, &cfg.params, h, cfg.scheme)?;
        state.time = target;
        if k % every == 0 || k == steps {
            record(&state, &mut traj);
        }
    }
    Ok(traj)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::{truncated_oseen, truncated_oseen_gradient};
    use crate::linalg::contract_middle;

    fn sample_state() -> MicroState {
        let centers = alloc::vec![
            Vec3::new(0.0, 0.0, 0.0),
            Vec3::new(0.3, 0.1, -0.2),
            Vec3::new(-0.25, 0.4, 0.1),
            Vec3::new(0.1, -0.35, 0.3),
        ];
        MicroState {
            time: 0.0,
            xi: alloc::vec![Vec3::new(0.0, 0.5, 2.0); centers.len()],
            centers,
        }
    }

    #[test]
    fn field_matches_kernel_sum() {
        let s = sample_state();
        let p = MicroParams {
            r0: 0.1,
            kappa_g: Vec3::new(0.3, 0.0, -1.0),
            cutoff: CutoffSpec::default(),
        };
        let d = 0.4;
        let x = Vec3::new(0.05, 0.12, -0.08);
        let mut u = Vec3::ZERO;
        let mut g = Mat3::ZERO;
        for c in &s.centers {
            u += truncated_oseen(x - *c, d, &p.cutoff).unwrap() * p.kappa_g;
            g += contract_middle(&truncated_oseen_gradient(x - *c, d, &p.cutoff).unwrap(), p.kappa_g);
        }
        let sc = 6.0 * PI * p.r0 / 4.0;
        assert!((discrete_k(&s, &p, d, x).unwrap() - u * sc).max_abs() < 1e-14);
        assert!((discrete_k_gradient(&s, &p, d, x).unwrap() - g.scale(sc)).max_abs() < 1e-13);
    }

    #[test]
    fn single_pair_velocity() {
        let s = MicroState {
            time: 0.0,
            centers: alloc::vec![Vec3::ZERO],
            xi: alloc::vec![Vec3::new(0.0, 0.0, 2.0)],
        };
        let p = MicroParams {
            r0: 0.1,
            kappa_g: Vec3::new(0.0, 0.0, -1.0),
            cutoff: CutoffSpec::default(),
        };
        let v = first_order_velocities(&s, &p).unwrap();
        assert!((v.centers[0][2] + 1.375).abs() < 1e-15);
        assert_eq!(v.xi[0], Vec3::ZERO);
    }

    #[test]
    fn run_lands_on_end_time() {
        let p = MicroParams {
            r0: 0.05,
            kappa_g: Vec3::new(0.0, 0.0, -1.0),
            cutoff: CutoffSpec::default(),
        };
        let cfg = MicroRunConfig {
            params: p,
            dt: 0.03,
            t_end: 0.1,
            scheme: Scheme::Rk4,
            save_every: 1,
            thresholds: Thresholds::default(),
            rho_inf: 1.0,
        };
        let t = run_micro(sample_state(), &cfg).unwrap();
        assert_eq!(t.snapshots.len(), 5);
        assert_eq!(t.snapshots.last().unwrap().state.time, 0.1);
    }
}
