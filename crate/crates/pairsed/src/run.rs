//! Mode drivers: initial data, simulation runs, and emitted files.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use pairsed_core::density::DensitySpec;
use pairsed_core::meso::{
    sample_density, step_meso_correlated, step_meso_kinetic, BlobSpec, Drive, FField, GridSpec,
    MesoParams, MesoParticle, OutsidePolicy,
};
use pairsed_core::metrics::{w_infinity_to_density, EmpiricalMeasure};
use pairsed_core::micro::{run_micro, MicroParams, MicroRunConfig, MicroState};
use pairsed_core::{Error, Vec3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::config::{ConfigError, EnsembleKind, ExperimentConfig, Mode, XiConfig};
use crate::converge::converge_study;
use crate::formats::{
    write_grid, write_json, write_snapshots_jsonl, write_trajectory_csv, FormatError,
    FORMAT_VERSION,
};
use crate::kernels_check::{random_vector, run_suite, Check};
use crate::manifest::{unix_now, write_manifest, write_timing, RunManifest};

/// Echo of the resolved configuration written next to the outputs.
pub const RESOLVED_CONFIG_FILE: &str = "config.resolved.json";

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("output error: {0}")]
    Format(#[from] FormatError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("{context}: {source}")]
    Sim {
        context: String,
        #[source]
        source: Error,
    },
    #[error("identity checks failed: {}", .0.join(", "))]
    ChecksFailed(Vec<String>),
}

impl RunError {
    /// Process exit code of the error family.
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Config(_) => 2,
            RunError::Sim { source, .. } => match source {
                Error::BlowUp { .. } | Error::Overlap { .. } => 3,
                Error::NonConvergence { .. } | Error::ReflectionDivergence { .. } => 4,
                Error::InvalidParameter { .. } => 2,
                _ => 1,
            },
            RunError::ChecksFailed(_) => 5,
            RunError::Format(_) | RunError::Io(_) => 1,
        }
    }
}

pub(crate) trait Context<T> {
    fn context(self, what: impl Into<String>) -> Result<T, RunError>;
}

impl<T> Context<T> for Result<T, Error> {
    fn context(self, what: impl Into<String>) -> Result<T, RunError> {
        self.map_err(|source| RunError::Sim {
            context: what.into(),
            source,
        })
    }
}

/// Generator for a named stream of the configured seed.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Typical interparticle spacing `(N |rho|_inf)^{-1/3}`.
pub fn spacing(rho: &DensitySpec, n: usize) -> f64 {
    (1.0 / (rho.sup() * n as f64)).cbrt()
}

fn initial_xi(cfg: &ExperimentConfig, x: Vec3, rng: &mut impl Rng) -> Vec3 {
    match &cfg.xi {
        XiConfig::Fixed { value } => Vec3(*value),
        XiConfig::Random { min, max } => random_vector(rng, *min, *max),
        XiConfig::Field => cfg.f0.eval(x),
    }
}

/// `n` pair centers sampled from `rho0` at the configured separation, with orientations.
pub fn initial_cloud(
    cfg: &ExperimentConfig,
    n: usize,
    rng: &mut impl Rng,
) -> Result<MicroState, RunError> {
    let rho = cfg.rho0.spec()?;
    let sep = cfg.separation * spacing(&rho, n);
    let centers = rho
        .sample_separated(n, sep, rng)
        .context("sampling initial centers")?;
    let xi = centers.iter().map(|x| initial_xi(cfg, *x, rng)).collect();
    Ok(MicroState {
        time: 0.0,
        centers,
        xi,
    })
}

pub fn micro_params(cfg: &ExperimentConfig) -> MicroParams {
    MicroParams {
        r0: cfg.r0,
        kappa_g: cfg.kappa_g(),
        cutoff: cfg.cutoff(),
    }
}

/// Mesoscopic parameters for an ensemble of `m` particles.
pub fn meso_params(cfg: &ExperimentConfig, m: usize) -> Result<MesoParams, RunError> {
    let delta = match cfg.meso.blob_delta {
        Some(d) => d,
        None => 2.0 * spacing(&cfg.rho0.spec()?, m),
    };
    Ok(MesoParams {
        r0: cfg.r0,
        kappa_g: cfg.kappa_g(),
        blob: BlobSpec { delta },
        law: cfg.meso.law(),
    })
}

/// Cells per axis used when measuring the distance of `n` points to `rho0`.
pub fn w_resolution(cfg: &ExperimentConfig, n: usize) -> usize {
    (cfg.converge.w_resolution * (n as f64).cbrt()).ceil() as usize
}

/// Mesoscopic ensemble of `rho0`: weighted quadrature nodes or equal-weight samples.
pub fn meso_ensemble(
    cfg: &ExperimentConfig,
    rng: &mut impl Rng,
) -> Result<Vec<MesoParticle>, RunError> {
    let rho = cfg.rho0.spec()?;
    let nodes: Vec<(Vec3, f64)> = match cfg.meso.ensemble {
        EnsembleKind::Quadrature => {
            let [a, b, c] = cfg.meso.quadrature;
            rho.quadrature(a, b, c)
        }
        EnsembleKind::Samples => {
            let w = 1.0 / cfg.m as f64;
            sample_density(&rho, cfg.m, cfg.seed)
                .context("sampling the mesoscopic ensemble")?
                .into_iter()
                .map(|x| (x, w))
                .collect()
        }
    };
    if nodes.is_empty() {
        return Err(ConfigError::Invalid {
            field: "meso.ensemble".into(),
            constraint: "quadrature needs a radial density; use samples".into(),
        }
        .into());
    }
    Ok(nodes
        .into_iter()
        .map(|(x, weight)| MesoParticle {
            x,
            xi: initial_xi(cfg, x, rng),
            weight,
        })
        .collect())
}

/// Grid holding the orientation field: the support box of `rho0` plus padding, stretched along
/// `kappa g` by the largest settling drift over `[0, t_end]`.
pub fn orientation_grid(cfg: &ExperimentConfig) -> Result<GridSpec, RunError> {
    let rho = cfg.rho0.spec()?;
    let (lo, hi) = rho.bounding_box();
    let pad = cfg.meso.padding;
    let (mut lo, mut hi) = (lo - Vec3::new(pad, pad, pad), hi + Vec3::new(pad, pad, pad));
    let mut dims = cfg.meso.grid;
    for a in 0..3 {
        let base = hi[a] - lo[a];
        let drift = 1.75 * cfg.kappa_g[a] * cfg.t_end;
        if drift < 0.0 {
            lo[a] += drift;
        } else {
            hi[a] += drift;
        }
        dims[a] += (dims[a] as f64 * drift.abs() / base).ceil() as usize;
    }
    GridSpec::spanning(lo, hi, dims).context("building the orientation grid")
}

pub fn step_count(cfg: &ExperimentConfig) -> usize {
    (cfg.t_end / cfg.dt - 1e-9).ceil().max(0.0) as usize
}

fn step_size(cfg: &ExperimentConfig, k: usize, steps: usize) -> f64 {
    if k + 1 == steps {
        cfg.t_end - k as f64 * cfg.dt
    } else {
        cfg.dt
    }
}

/// Result of the coupled density/orientation run.
pub struct CorrelatedRun {
    pub particles: Vec<MesoParticle>,
    pub field: FField,
    pub time: f64,
}

/// Runs the coupled system from `F0` to `t_end`.
pub fn run_correlated(cfg: &ExperimentConfig) -> Result<CorrelatedRun, RunError> {
    let grid = orientation_grid(cfg)?;
    let f0 = &cfg.f0;
    let mut field = FField::from_fn(grid, |x| f0.eval(x))
        .with_interp(cfg.meso.interp())
        .with_outside(OutsidePolicy::Clamp);
    let mut rng = stream_rng(cfg.seed, 1);
    let mut particles: Vec<MesoParticle> = meso_ensemble(cfg, &mut rng)?
        .into_iter()
        .map(|p| MesoParticle {
            xi: f0.eval(p.x),
            ..p
        })
        .collect();
    let params = meso_params(cfg, particles.len())?;
    let steps = step_count(cfg);
    let mut time = 0.0;
    for k in 0..steps {
        let h = step_size(cfg, k, steps);
        let (p, f) = step_meso_correlated(
            &particles,
            &field,
            &params,
            h,
            cfg.meso.split(),
            Drive::SelfConsistent,
        )
        .context(format!("correlated step at t = {time}"))?;
        time += h;
        if let Some(q) = p.iter().find(|q| !f.grid.contains(q.x)) {
            return Err(RunError::Sim {
                context: format!("correlated step at t = {time}"),
                source: Error::OutOfDomain { point: q.x },
            });
        }
        particles = p;
        field = f;
    }
    Ok(CorrelatedRun {
        particles,
        field,
        time: cfg.t_end,
    })
}

#[derive(Serialize)]
struct WarningRecord {
    t: f64,
    flag: &'static str,
}

#[derive(Serialize)]
struct MicroReport {
    format_version: u32,
    d_min: f64,
    w_inf: f64,
    ratio2: f64,
    ratio3: f64,
    xi_min: f64,
    xi_max: f64,
    flags: Vec<&'static str>,
    n: usize,
    radius: f64,
    t_end: f64,
    d_min_initial: f64,
    w_inf_initial: f64,
    warnings: Vec<WarningRecord>,
}

fn run_micro_mode(cfg: &ExperimentConfig, dir: &Path) -> Result<Vec<String>, RunError> {
    let mut rng = stream_rng(cfg.seed, 0);
    let initial = initial_cloud(cfg, cfg.n, &mut rng)?;
    let rho = cfg.rho0.spec()?;
    let w0 = w_infinity_to_density(
        &EmpiricalMeasure::new(initial.centers.clone()),
        &rho,
        w_resolution(cfg, cfg.n),
    )
    .context("distance of the initial cloud")?;
    let run = MicroRunConfig {
        params: micro_params(cfg),
        dt: cfg.dt,
        t_end: cfg.t_end,
        scheme: cfg.scheme.into(),
        save_every: cfg.save_every,
        thresholds: cfg.thresholds.thresholds(),
        rho_inf: rho.sup(),
    };
    let traj = run_micro(initial, &run).context("particle run")?;
    let out = &cfg.output;
    write_trajectory_csv(&dir.join(&out.trajectory), &traj.snapshots)?;
    write_snapshots_jsonl(&dir.join(&out.snapshots), &traj.snapshots)?;
    let first = &traj.snapshots[0].diagnostics;
    let last = &traj.snapshots.last().expect("initial snapshot").diagnostics;
    let report = MicroReport {
        format_version: FORMAT_VERSION,
        d_min: last.d_min,
        w_inf: last.w_inf_proxy,
        ratio2: last.ratio2,
        ratio3: last.ratio3,
        xi_min: last.xi_min,
        xi_max: last.xi_max,
        flags: last.flags.iter().map(|f| f.as_str()).collect(),
        n: cfg.n,
        radius: run.params.radius(cfg.n),
        t_end: cfg.t_end,
        d_min_initial: first.d_min,
        w_inf_initial: w0.value,
        warnings: traj
            .warnings
            .iter()
            .map(|w| WarningRecord {
                t: w.time,
                flag: w.flag.as_str(),
            })
            .collect(),
    };
    write_json(&dir.join(&out.report), &report)?;
    Ok(vec![
        out.trajectory.clone(),
        out.snapshots.clone(),
        out.report.clone(),
    ])
}

fn extent(particles: &[MesoParticle]) -> f64 {
    let mut lo = Vec3::new(f64::INFINITY, f64::INFINITY, f64::INFINITY);
    let mut hi = -lo;
    for p in particles {
        for a in 0..3 {
            lo[a] = lo[a].min(p.x[a]);
            hi[a] = hi[a].max(p.x[a]);
        }
    }
    (hi - lo).norm()
}

fn centroid(particles: &[MesoParticle]) -> [f64; 3] {
    particles
        .iter()
        .fold(Vec3::ZERO, |c, p| c + p.x * p.weight)
        .0
}

fn write_ensemble(path: &Path, frames: &[(f64, Vec<MesoParticle>)]) -> Result<(), FormatError> {
    let mut out = BufWriter::new(File::create(path)?);
    writeln!(out, "# format_version={FORMAT_VERSION}")?;
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["t", "k", "x", "y", "z", "xi_x", "xi_y", "xi_z", "weight"])?;
    for (t, ps) in frames {
        for (k, p) in ps.iter().enumerate() {
            let mut rec = vec![t.to_string(), k.to_string()];
            rec.extend(p.x.0.iter().map(f64::to_string));
            rec.extend(p.xi.0.iter().map(f64::to_string));
            rec.push(p.weight.to_string());
            w.write_record(&rec)?;
        }
    }
    w.flush()?;
    Ok(())
}

#[derive(Serialize)]
struct MesoReport {
    format_version: u32,
    particles: usize,
    blob_delta: f64,
    t_end: f64,
    steps: usize,
    mass: f64,
    extent_initial: f64,
    extent_final: f64,
    centroid_initial: [f64; 3],
    centroid_final: [f64; 3],
}

fn run_meso_mode(cfg: &ExperimentConfig, dir: &Path) -> Result<Vec<String>, RunError> {
    let mut rng = stream_rng(cfg.seed, 1);
    let mut particles = meso_ensemble(cfg, &mut rng)?;
    let initial = particles.clone();
    let params = meso_params(cfg, particles.len())?;
    let steps = step_count(cfg);
    let mut frames = vec![(0.0, particles.clone())];
    let mut time = 0.0;
    for k in 0..steps {
        let h = step_size(cfg, k, steps);
        particles = step_meso_kinetic(&particles, &params, h, Drive::SelfConsistent)
            .context(format!("kinetic step at t = {time}"))?;
        time = if k + 1 == steps { cfg.t_end } else { time + h };
        if (k + 1) % cfg.save_every == 0 || k + 1 == steps {
            frames.push((time, particles.clone()));
        }
    }
    let name = "ensemble.csv".to_string();
    write_ensemble(&dir.join(&name), &frames)?;
    let report = MesoReport {
        format_version: FORMAT_VERSION,
        particles: particles.len(),
        blob_delta: params.blob.delta,
        t_end: cfg.t_end,
        steps,
        mass: particles.iter().map(|p| p.weight).sum(),
        extent_initial: extent(&initial),
        extent_final: extent(&particles),
        centroid_initial: centroid(&initial),
        centroid_final: centroid(&particles),
    };
    write_json(&dir.join(&cfg.output.report), &report)?;
    Ok(vec![name, cfg.output.report.clone()])
}

#[derive(Serialize)]
struct CorrelatedReport {
    format_version: u32,
    particles: usize,
    blob_delta: f64,
    grid_dims: [usize; 3],
    t_end: f64,
    steps: usize,
    mass: f64,
    field_min: f64,
    field_max: f64,
    extent_initial: f64,
    extent_final: f64,
}

fn run_correlated_mode(cfg: &ExperimentConfig, dir: &Path) -> Result<Vec<String>, RunError> {
    let mut rng = stream_rng(cfg.seed, 1);
    let initial = meso_ensemble(cfg, &mut rng)?;
    let run = run_correlated(cfg)?;
    let out = &cfg.output;
    write_grid(&dir.join(&out.grid), &run.field, run.time)?;
    let name = "ensemble.csv".to_string();
    write_ensemble(&dir.join(&name), &[(run.time, run.particles.clone())])?;
    let norms = run.field.values.iter().map(|v| v.norm());
    let report = CorrelatedReport {
        format_version: FORMAT_VERSION,
        particles: run.particles.len(),
        blob_delta: meso_params(cfg, initial.len())?.blob.delta,
        grid_dims: run.field.grid.dims,
        t_end: cfg.t_end,
        steps: step_count(cfg),
        mass: run.particles.iter().map(|p| p.weight).sum(),
        field_min: norms.clone().fold(f64::INFINITY, f64::min),
        field_max: norms.fold(0.0, f64::max),
        extent_initial: extent(&initial),
        extent_final: extent(&run.particles),
    };
    write_json(&dir.join(&out.report), &report)?;
    Ok(vec![out.grid.clone(), name, out.report.clone()])
}

#[derive(Serialize)]
struct CheckReport<'a> {
    format_version: u32,
    passed: bool,
    checks: &'a [Check],
}

fn run_kernels_check(cfg: &ExperimentConfig, dir: &Path) -> Result<Vec<String>, RunError> {
    let checks = run_suite(cfg.seed);
    let passed = checks.iter().all(|c| c.passed);
    write_json(
        &dir.join(&cfg.output.report),
        &CheckReport {
            format_version: FORMAT_VERSION,
            passed,
            checks: &checks,
        },
    )?;
    if !passed {
        return Err(RunError::ChecksFailed(
            checks
                .iter()
                .filter(|c| !c.passed)
                .map(|c| c.name.clone())
                .collect(),
        ));
    }
    Ok(vec![cfg.output.report.clone()])
}

/// Executes the configured mode in `dir` and writes the manifest and timing sidecar.
pub fn run(cfg: &ExperimentConfig, dir: &Path, threads: usize) -> Result<RunManifest, RunError> {
    cfg.validate()?;
    let start = unix_now();
    fs::create_dir_all(dir)?;
    write_json(&dir.join(RESOLVED_CONFIG_FILE), cfg)?;
    let mut files = match cfg.mode {
        Mode::Micro => run_micro_mode(cfg, dir)?,
        Mode::MesoKinetic => run_meso_mode(cfg, dir)?,
        Mode::MesoCorrelated => run_correlated_mode(cfg, dir)?,
        Mode::Converge => converge_study(cfg, dir, threads)?,
        Mode::KernelsCheck => run_kernels_check(cfg, dir)?,
    };
    files.push(RESOLVED_CONFIG_FILE.to_string());
    let manifest = write_manifest(dir, cfg, &files)?;
    write_timing(dir, start)?;
    Ok(manifest)
}
