//! Convergence study: matched particle and mean-field runs over a ladder of `N`.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use pairsed_core::meso::{FField, FlowField, RadialConvolution};
use pairsed_core::metrics::{
    field_error_report, fit_slope, probe_lattice, w_infinity_to_density, EmpiricalMeasure,
};
use pairsed_core::micro::{
    discrete_k_with_gradient, first_order_velocities, run_micro, MicroRunConfig, MicroState,
};
use pairsed_core::reflections::{solve_reflections, Cloud, ReflectionOptions};
use pairsed_core::Error;
use serde::Serialize;

use crate::config::{ConfigError, ExperimentConfig};
use crate::formats::{write_json, FormatError, FORMAT_VERSION};
use crate::run::{
    initial_cloud, micro_params, run_correlated, stream_rng, w_resolution, Context, RunError,
};

pub const RATES_HEADER: [&str; 11] = [
    "n",
    "replicate",
    "d_min",
    "w_inf",
    "e0",
    "e1",
    "e0_particles",
    "e1_particles",
    "vel_center_err",
    "vel_xi_err",
    "xi_err_T",
];

/// Measurements of one sampled cloud.
#[derive(Clone, Debug, Serialize, PartialEq)]
pub struct RateRow {
    pub n: usize,
    pub replicate: usize,
    pub d_min: f64,
    pub w_inf: f64,
    /// Sup-norm field errors on the probe lattice.
    pub e0: f64,
    pub e1: f64,
    /// Sup-norm field errors at the pair centers.
    pub e0_particles: f64,
    pub e1_particles: f64,
    pub vel_center_err: Option<f64>,
    pub vel_xi_err: Option<f64>,
    pub xi_err_t: Option<f64>,
}

impl RateRow {
    fn record(&self) -> Vec<String> {
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        vec![
            self.n.to_string(),
            self.replicate.to_string(),
            self.d_min.to_string(),
            self.w_inf.to_string(),
            self.e0.to_string(),
            self.e1.to_string(),
            self.e0_particles.to_string(),
            self.e1_particles.to_string(),
            opt(self.vel_center_err),
            opt(self.vel_xi_err),
            opt(self.xi_err_t),
        ]
    }
}

/// Replicate means for one `N`.
#[derive(Clone, Debug, Serialize, PartialEq)]
pub struct RateMean {
    pub n: usize,
    pub d_min: f64,
    pub w_inf: f64,
    pub e0: f64,
    pub e1: f64,
    pub e0_particles: f64,
    pub e1_particles: f64,
    pub vel_center_err: Option<f64>,
    pub vel_xi_err: Option<f64>,
    pub xi_err_t: Option<f64>,
}

/// Log-log slopes of the replicate means; absent when fewer than two `N` are available.
#[derive(Clone, Debug, Default, Serialize, PartialEq)]
pub struct Slopes {
    pub e0_vs_w_inf: Option<f64>,
    pub e1_vs_w_inf_log: Option<f64>,
    pub e0_particles_vs_w_inf: Option<f64>,
    pub e1_particles_vs_w_inf_log: Option<f64>,
    pub w_inf_vs_n: Option<f64>,
    pub d_min_vs_n: Option<f64>,
    pub vel_center_vs_d_min: Option<f64>,
    pub vel_xi_vs_d_min: Option<f64>,
    pub xi_err_vs_n: Option<f64>,
}

#[derive(Clone, Debug, Serialize, PartialEq)]
pub struct ConvergeReport {
    pub format_version: u32,
    pub means: Vec<RateMean>,
    pub slopes: Slopes,
}

/// `w (1 + |log w|)`.
pub fn w_log(w: f64) -> f64 {
    w * (1.0 + w.ln().abs())
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let (s, k) = xs.fold((0.0, 0usize), |(s, k), x| (s + x, k + 1));
    s / k as f64
}

fn mean_opt(rows: &[RateRow], f: impl Fn(&RateRow) -> Option<f64>) -> Option<f64> {
    let v: Option<Vec<f64>> = rows.iter().map(&f).collect();
    v.map(|v| mean(v.into_iter()))
}

pub fn means(rows: &[RateRow]) -> Vec<RateMean> {
    let mut ns: Vec<usize> = rows.iter().map(|r| r.n).collect();
    ns.dedup();
    ns.into_iter()
        .map(|n| {
            let rs: Vec<RateRow> = rows.iter().filter(|r| r.n == n).cloned().collect();
            let m = |f: fn(&RateRow) -> f64| mean(rs.iter().map(f));
            RateMean {
                n,
                d_min: m(|r| r.d_min),
                w_inf: m(|r| r.w_inf),
                e0: m(|r| r.e0),
                e1: m(|r| r.e1),
                e0_particles: m(|r| r.e0_particles),
                e1_particles: m(|r| r.e1_particles),
                vel_center_err: mean_opt(&rs, |r| r.vel_center_err),
                vel_xi_err: mean_opt(&rs, |r| r.vel_xi_err),
                xi_err_t: mean_opt(&rs, |r| r.xi_err_t),
            }
        })
        .collect()
}

pub fn slopes(means: &[RateMean]) -> Slopes {
    if means.len() < 2 {
        return Slopes::default();
    }
    let fit = |xs: Vec<f64>, ys: Vec<f64>| fit_slope(&xs, &ys).ok().map(|f| f.slope);
    let col = |f: &dyn Fn(&RateMean) -> f64| means.iter().map(f).collect::<Vec<f64>>();
    // Fits over the rows where the optional column is present.
    let partial = |x: &dyn Fn(&RateMean) -> f64, y: &dyn Fn(&RateMean) -> Option<f64>| {
        let (xs, ys): (Vec<f64>, Vec<f64>) =
            means.iter().filter_map(|m| y(m).map(|v| (x(m), v))).unzip();
        if xs.len() < 2 {
            None
        } else {
            fit(xs, ys)
        }
    };
    let w = col(&|m| m.w_inf);
    let wl = col(&|m| w_log(m.w_inf));
    let n = col(&|m| m.n as f64);
    let d = col(&|m| m.d_min);
    Slopes {
        e0_vs_w_inf: fit(w.clone(), col(&|m| m.e0)),
        e1_vs_w_inf_log: fit(wl.clone(), col(&|m| m.e1)),
        e0_particles_vs_w_inf: fit(w.clone(), col(&|m| m.e0_particles)),
        e1_particles_vs_w_inf_log: fit(wl, col(&|m| m.e1_particles)),
        w_inf_vs_n: fit(n.clone(), w),
        d_min_vs_n: fit(n, d),
        vel_center_vs_d_min: partial(&|m| m.d_min, &|m| m.vel_center_err),
        vel_xi_vs_d_min: partial(&|m| m.d_min, &|m| m.vel_xi_err),
        xi_err_vs_n: partial(&|m| m.n as f64, &|m| m.xi_err_t),
    }
}

/// Applies `f` to every item on up to `threads` scoped workers, keeping the input order.
pub fn par_map<T: Sync, R: Send>(
    items: &[T],
    threads: usize,
    f: impl Fn(&T) -> R + Sync,
) -> Vec<R> {
    let workers = threads.clamp(1, items.len().max(1));
    if workers == 1 {
        return items.iter().map(f).collect();
    }
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<R>>> = Mutex::new((0..items.len()).map(|_| None).collect());
    std::thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= items.len() {
                    break;
                }
                let r = f(&items[i]);
                slots.lock().expect("no poisoned workers")[i] = Some(r);
            });
        }
    });
    slots
        .into_inner()
        .expect("no poisoned workers")
        .into_iter()
        .map(|r| r.expect("every slot filled"))
        .collect()
}

/// Velocity-law deviations of the first-order law from the reflection solver:
/// `max |v_center - U_+|` and `max |v_xi - (U_1 - U_2)/(2R)| / |xi|`.
pub fn velocity_law_errors(
    state: &MicroState,
    cfg: &ExperimentConfig,
) -> Result<(f64, f64), Error> {
    let params = micro_params(cfg);
    let radius = params.radius(state.len());
    let v = first_order_velocities(state, &params)?;
    let cloud = Cloud {
        centers: state.centers.clone(),
        xi: state.xi.clone(),
        radius,
        kappa_g: params.kappa_g,
    };
    let opts = ReflectionOptions {
        m1: cfg.thresholds.m1,
        ..ReflectionOptions::default()
    };
    let sol = solve_reflections(&cloud, &opts)?;
    let uc = sol.center_velocities();
    let ux = sol.xi_velocities(radius);
    let mut ec = 0.0f64;
    let mut ex = 0.0f64;
    for i in 0..state.len() {
        ec = ec.max((v.centers[i] - uc[i]).norm());
        ex = ex.max((v.xi[i] - ux[i]).norm() / state.xi[i].norm());
    }
    Ok((ec, ex))
}

fn measure(
    cfg: &ExperimentConfig,
    exact: &RadialConvolution,
    field_t: Option<&FField>,
    n: usize,
    replicate: usize,
) -> Result<RateRow, RunError> {
    let ctx = |what: &str| format!("converge N = {n} replicate {replicate}: {what}");
    let rho = cfg.rho0.spec()?;
    let mut rng = stream_rng(cfg.seed, ((n as u64) << 20) | (replicate as u64 + 16));
    let mut state = initial_cloud(cfg, n, &mut rng)?;
    if field_t.is_some() {
        for (x, xi) in state.centers.iter().zip(state.xi.iter_mut()) {
            *xi = cfg.f0.eval(*x);
        }
    }
    let params = micro_params(cfg);
    let d_min = state.d_min();
    let w = w_infinity_to_density(
        &EmpiricalMeasure::new(state.centers.clone()),
        &rho,
        w_resolution(cfg, n),
    )
    .context(ctx("distance to the density"))?;
    let approx = |x| discrete_k_with_gradient(&state, &params, d_min, x);
    let reference = |x| exact.eval(x);
    let probes = probe_lattice(
        &rho,
        cfg.converge.probes,
        &state.centers,
        cfg.cutoff.outer * d_min,
    );
    let lattice = field_error_report(&probes, approx, reference).context(ctx("probe errors"))?;
    let at_particles =
        field_error_report(&state.centers, approx, reference).context(ctx("particle errors"))?;
    let (vel_center_err, vel_xi_err) = if n <= cfg.converge.reflections_max_n {
        let (a, b) = velocity_law_errors(&state, cfg).context(ctx("reflections"))?;
        (Some(a), Some(b))
    } else {
        (None, None)
    };
    let xi_err_t = match field_t {
        Some(f) => {
            let run = MicroRunConfig {
                params,
                dt: cfg.dt,
                t_end: cfg.t_end,
                scheme: cfg.scheme.into(),
                save_every: usize::MAX,
                thresholds: cfg.thresholds.thresholds(),
                rho_inf: rho.sup(),
            };
            let traj = run_micro(state.clone(), &run).context(ctx("particle run"))?;
            let last = &traj.snapshots.last().expect("final snapshot").state;
            let mut e = 0.0f64;
            for (x, xi) in last.centers.iter().zip(&last.xi) {
                e = e.max((*xi - f.sample(*x).context(ctx("field at T"))?).norm());
            }
            Some(e)
        }
        None => None,
    };
    Ok(RateRow {
        n,
        replicate,
        d_min,
        w_inf: w.value,
        e0: lattice.e0,
        e1: lattice.e1,
        e0_particles: at_particles.e0,
        e1_particles: at_particles.e1,
        vel_center_err,
        vel_xi_err,
        xi_err_t,
    })
}

/// Runs the study in memory; `on_n` receives the rows of each `N` as soon as they are complete.
pub fn converge_rows(
    cfg: &ExperimentConfig,
    threads: usize,
    mut on_n: impl FnMut(&[RateRow]) -> Result<(), RunError>,
) -> Result<Vec<RateRow>, RunError> {
    let rho = cfg.rho0.spec()?;
    let exact = RadialConvolution::new(&rho, cfg.r0, cfg.kappa_g()).map_err(|e| {
        ConfigError::Invalid {
            field: "rho0".into(),
            constraint: format!("the convergence study needs a radial density ({e})"),
        }
    })?;
    let field_t = if cfg.converge.correlated {
        Some(run_correlated(cfg)?.field)
    } else {
        None
    };
    let mut rows = Vec::new();
    for &n in &cfg.converge.n_list {
        let reps: Vec<usize> = (0..cfg.converge.replicates).collect();
        let batch = par_map(&reps, threads, |r| {
            measure(cfg, &exact, field_t.as_ref(), n, *r)
        })
        .into_iter()
        .collect::<Result<Vec<_>, _>>()?;
        on_n(&batch)?;
        rows.extend(batch);
    }
    Ok(rows)
}

/// Writes `rates.csv` (flushed after every `N`) and the slope report.
pub fn converge_study(
    cfg: &ExperimentConfig,
    dir: &Path,
    threads: usize,
) -> Result<Vec<String>, RunError> {
    let out = &cfg.output;
    let file = File::create(dir.join(&out.rates))?;
    let mut raw = BufWriter::new(file);
    writeln!(raw, "# format_version={FORMAT_VERSION}")?;
    let mut w = csv::Writer::from_writer(raw);
    w.write_record(RATES_HEADER).map_err(FormatError::from)?;
    w.flush()?;
    let rows = converge_rows(cfg, threads, |batch| {
        for r in batch {
            w.write_record(r.record()).map_err(FormatError::from)?;
        }
        w.flush()?;
        Ok(())
    })?;
    let m = means(&rows);
    let report = ConvergeReport {
        format_version: FORMAT_VERSION,
        slopes: slopes(&m),
        means: m,
    };
    write_json(&dir.join(&out.report), &report)?;
    Ok(vec![out.rates.clone(), out.report.clone()])
}
