//! Experiment configuration: TOML schema, defaults, and validation.

use pairsed_core::density::{DensitySpec, TabulatedDensity};
use pairsed_core::kernels::CutoffSpec;
use pairsed_core::meso::{Interp, SettlingLaw, SplitOrder};
use pairsed_core::metrics::Thresholds;
use pairsed_core::micro::Scheme;
use pairsed_core::Vec3;
use serde::{Deserialize, Serialize};

/// Largest accepted number of pairs.
pub const MAX_PAIRS: usize = 10_000;
/// Largest accepted mesoscopic ensemble.
pub const MAX_MESO: usize = 1_000_000;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum ConfigError {
    #[error("config parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("invalid config field `{field}`: {constraint}")]
    Invalid { field: String, constraint: String },
}

fn invalid(field: &str, constraint: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        field: field.to_string(),
        constraint: constraint.into(),
    }
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Micro,
    MesoKinetic,
    MesoCorrelated,
    Converge,
    KernelsCheck,
}

#[derive(Clone, Copy, Debug, Default, Serialize, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum SchemeName {
    Euler,
    #[default]
    Rk4,
}

impl From<SchemeName> for Scheme {
    fn from(s: SchemeName) -> Scheme {
        match s {
            SchemeName::Euler => Scheme::Euler,
            SchemeName::Rk4 => Scheme::Rk4,
        }
    }
}

/// Reference density.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DensityConfig {
    UniformBall {
        #[serde(default)]
        center: [f64; 3],
        radius: f64,
    },
    TruncatedGaussian {
        #[serde(default)]
        center: [f64; 3],
        sigma: f64,
        cutoff: f64,
    },
    Tabulated {
        origin: [f64; 3],
        cell: f64,
        dims: [usize; 3],
        weights: Vec<f64>,
    },
}

impl Default for DensityConfig {
    fn default() -> Self {
        DensityConfig::UniformBall {
            center: [0.0; 3],
            radius: 1.0,
        }
    }
}

impl DensityConfig {
    pub fn spec(&self) -> Result<DensitySpec, ConfigError> {
        let spec = match self {
            DensityConfig::UniformBall { center, radius } => DensitySpec::UniformBall {
                center: Vec3(*center),
                radius: *radius,
            },
            DensityConfig::TruncatedGaussian {
                center,
                sigma,
                cutoff,
            } => DensitySpec::TruncatedGaussian {
                center: Vec3(*center),
                sigma: *sigma,
                cutoff: *cutoff,
            },
            DensityConfig::Tabulated {
                origin,
                cell,
                dims,
                weights,
            } => DensitySpec::Tabulated(
                TabulatedDensity::new(Vec3(*origin), *cell, *dims, weights.clone())
                    .map_err(|e| invalid("rho0.weights", e.to_string()))?,
            ),
        };
        spec.validate().map_err(|e| invalid("rho0", e.to_string()))?;
        Ok(spec)
    }
}

/// Smooth orientation field `F0`.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum FieldConfig {
    Constant {
        value: [f64; 3],
    },
    /// `value + gradient x`.
    Linear {
        value: [f64; 3],
        gradient: [[f64; 3]; 3],
    },
    /// Component `i` is `base_i + amplitude_i sin(wavenumber x_{i+1} + phase_i)`, indices mod 3.
    Trig {
        base: [f64; 3],
        amplitude: [f64; 3],
        wavenumber: f64,
        #[serde(default)]
        phase: [f64; 3],
    },
}

impl Default for FieldConfig {
    fn default() -> Self {
        FieldConfig::Trig {
            base: [0.0, 0.0, 2.0],
            amplitude: [0.5, 0.5, 0.3],
            wavenumber: 2.0,
            phase: [0.0, std::f64::consts::FRAC_PI_2, 0.0],
        }
    }
}

impl FieldConfig {
    pub fn eval(&self, x: Vec3) -> Vec3 {
        match self {
            FieldConfig::Constant { value } => Vec3(*value),
            FieldConfig::Linear { value, gradient } => {
                Vec3(*value) + pairsed_core::Mat3(*gradient) * x
            }
            FieldConfig::Trig {
                base,
                amplitude,
                wavenumber,
                phase,
            } => Vec3(std::array::from_fn(|i| {
                base[i] + amplitude[i] * (wavenumber * x[(i + 1) % 3] + phase[i]).sin()
            })),
        }
    }

    /// Upper and lower bounds of `|F0|` over a box, sampled on a lattice.
    pub fn norm_range(&self, lo: Vec3, hi: Vec3) -> (f64, f64) {
        let k = 12;
        let mut r = (f64::INFINITY, 0.0f64);
        for n in 0..k * k * k {
            let t = [n % k, (n / k) % k, n / (k * k)].map(|i| i as f64 / (k - 1) as f64);
            let x = Vec3(std::array::from_fn(|a| lo[a] + (hi[a] - lo[a]) * t[a]));
            let v = self.eval(x).norm();
            r = (r.0.min(v), r.1.max(v));
        }
        r
    }
}

/// Initial orientations of particles.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum XiConfig {
    Fixed { value: [f64; 3] },
    /// Uniformly random direction with length uniform in `[min, max]`.
    Random { min: f64, max: f64 },
    /// Evaluate the `f0` field at each particle.
    Field,
}

impl Default for XiConfig {
    fn default() -> Self {
        XiConfig::Random { min: 2.0, max: 3.0 }
    }
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct CutoffConfig {
    pub inner: f64,
    pub outer: f64,
}

impl Default for CutoffConfig {
    fn default() -> Self {
        let c = CutoffSpec::default();
        CutoffConfig {
            inner: c.inner,
            outer: c.outer,
        }
    }
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct ThresholdConfig {
    pub m1: f64,
    pub m2: f64,
    pub e1: f64,
    pub e2: f64,
}

impl Default for ThresholdConfig {
    fn default() -> Self {
        let t = Thresholds::default();
        ThresholdConfig {
            m1: t.m1,
            m2: t.m2,
            e1: t.e1,
            e2: t.e2,
        }
    }
}

impl ThresholdConfig {
    pub fn thresholds(&self) -> Thresholds {
        Thresholds {
            m1: self.m1,
            m2: self.m2,
            e1: self.e1,
            e2: self.e2,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, Serialize, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum EnsembleKind {
    /// Weighted radial quadrature nodes of `rho0`.
    #[default]
    Quadrature,
    /// Equal-weight independent samples of `rho0`.
    Samples,
}

#[derive(Clone, Copy, Debug, Default, Serialize, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum SplitName {
    #[default]
    First,
    Second,
}

#[derive(Clone, Copy, Debug, Default, Serialize, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum InterpName {
    #[default]
    Trilinear,
    Tricubic,
}

#[derive(Clone, Copy, Debug, Default, Serialize, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum LawName {
    #[default]
    PairClosure,
    Isotropic,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct MesoConfig {
    /// Blob length; twice the typical spacing of the ensemble when absent.
    pub blob_delta: Option<f64>,
    pub ensemble: EnsembleKind,
    /// Radial, polar, and azimuthal node counts of the quadrature ensemble.
    pub quadrature: [usize; 3],
    /// Nodes per axis of the orientation grid.
    pub grid: [usize; 3],
    /// Margin added around the support of `rho0` by the grid box.
    pub padding: f64,
    pub split: SplitName,
    pub interp: InterpName,
    pub law: LawName,
}

impl Default for MesoConfig {
    fn default() -> Self {
        MesoConfig {
            blob_delta: None,
            ensemble: EnsembleKind::Quadrature,
            quadrature: [10, 10, 20],
            grid: [20, 20, 20],
            padding: 0.5,
            split: SplitName::First,
            interp: InterpName::Trilinear,
            law: LawName::PairClosure,
        }
    }
}

impl MesoConfig {
    pub fn split(&self) -> SplitOrder {
        match self.split {
            SplitName::First => SplitOrder::First,
            SplitName::Second => SplitOrder::Second,
        }
    }

    pub fn interp(&self) -> Interp {
        match self.interp {
            InterpName::Trilinear => Interp::Trilinear,
            InterpName::Tricubic => Interp::Tricubic,
        }
    }

    pub fn law(&self) -> SettlingLaw {
        match self.law {
            LawName::PairClosure => SettlingLaw::PairClosure,
            LawName::Isotropic => SettlingLaw::Isotropic,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct ConvergeConfig {
    pub n_list: Vec<usize>,
    /// Independent clouds per `N`; reported errors are replicate means.
    pub replicates: usize,
    /// Probe lattice points per axis.
    pub probes: usize,
    /// Cells per axis of the density discretization, in units of `N^{1/3}`.
    pub w_resolution: f64,
    /// Compare the velocity law with the reflection solver up to this `N`.
    pub reflections_max_n: usize,
    /// Run the particle system to `t_end` and compare orientations with the gridded field.
    pub correlated: bool,
}

impl Default for ConvergeConfig {
    fn default() -> Self {
        ConvergeConfig {
            n_list: vec![128, 256, 512, 1024, 2048],
            replicates: 4,
            probes: 16,
            w_resolution: 3.0,
            reflections_max_n: 0,
            correlated: false,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    pub trajectory: String,
    pub snapshots: String,
    pub report: String,
    pub grid: String,
    pub rates: String,
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig {
            trajectory: "trajectory.csv".into(),
            snapshots: "snapshots.jsonl".into(),
            report: "report.json".into(),
            grid: "field.fgrd".into(),
            rates: "rates.csv".into(),
        }
    }
}

/// A complete, resolved experiment description.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub mode: Mode,
    #[serde(default)]
    pub seed: u64,
    /// Number of pairs.
    #[serde(default = "default_n")]
    pub n: usize,
    /// Size of the mesoscopic ensemble when sampled.
    #[serde(default = "default_m")]
    pub m: usize,
    #[serde(default = "default_r0")]
    pub r0: f64,
    #[serde(default = "default_kappa_g")]
    pub kappa_g: [f64; 3],
    #[serde(default = "default_dt")]
    pub dt: f64,
    #[serde(default = "default_t_end")]
    pub t_end: f64,
    #[serde(default)]
    pub scheme: SchemeName,
    #[serde(default = "default_save_every")]
    pub save_every: usize,
    /// Minimal separation of sampled pair centers in units of `(N |rho0|)^{-1/3}`; 0 disables.
    #[serde(default = "default_separation")]
    pub separation: f64,
    #[serde(default)]
    pub rho0: DensityConfig,
    #[serde(default)]
    pub xi: XiConfig,
    #[serde(default)]
    pub f0: FieldConfig,
    #[serde(default)]
    pub cutoff: CutoffConfig,
    #[serde(default)]
    pub thresholds: ThresholdConfig,
    #[serde(default)]
    pub meso: MesoConfig,
    #[serde(default)]
    pub converge: ConvergeConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

fn default_n() -> usize {
    256
}
fn default_m() -> usize {
    4000
}
fn default_r0() -> f64 {
    0.05
}
fn default_kappa_g() -> [f64; 3] {
    [0.0, 0.0, -1.0]
}
fn default_dt() -> f64 {
    0.05
}
fn default_t_end() -> f64 {
    1.0
}
fn default_save_every() -> usize {
    1
}
fn default_separation() -> f64 {
    0.5
}

impl ExperimentConfig {
    pub fn cutoff(&self) -> CutoffSpec {
        CutoffSpec {
            inner: self.cutoff.inner,
            outer: self.cutoff.outer,
        }
    }

    pub fn kappa_g(&self) -> Vec3 {
        Vec3(self.kappa_g)
    }

    /// Check every constraint, naming the first offending field.
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.n < 1 {
            return Err(invalid("n", "need N >= 1"));
        }
        if self.n > MAX_PAIRS {
            return Err(invalid("n", format!("must not exceed {MAX_PAIRS}")));
        }
        if self.m < 1 || self.m > MAX_MESO {
            return Err(invalid("m", format!("must lie in [1, {MAX_MESO}]")));
        }
        if !(self.r0.is_finite() && self.r0 > 0.0) {
            return Err(invalid("r0", "must be finite and positive"));
        }
        if !self.kappa_g.iter().all(|v| v.is_finite()) {
            return Err(invalid("kappa_g", "components must be finite"));
        }
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return Err(invalid("dt", "must be finite and positive"));
        }
        if !(self.t_end.is_finite() && self.t_end >= 0.0) {
            return Err(invalid("t_end", "must be finite and nonnegative"));
        }
        if self.save_every < 1 {
            return Err(invalid("save_every", "must be at least 1"));
        }
        if !(self.separation.is_finite() && (0.0..1.0).contains(&self.separation)) {
            return Err(invalid("separation", "must lie in [0, 1)"));
        }
        let c = &self.cutoff;
        if !(c.inner.is_finite() && c.outer.is_finite() && c.inner >= 0.0 && c.outer > c.inner) {
            return Err(invalid("cutoff", "need 0 <= inner < outer"));
        }
        if c.outer >= 1.0 {
            return Err(invalid(
                "cutoff.outer",
                "must be below 1 so that neighbors at the minimal distance are not truncated",
            ));
        }
        let t = &self.thresholds;
        if !(t.m2.is_finite() && t.m2 > 1.0) {
            return Err(invalid("thresholds.m2", "must exceed 1 (spheres of a pair must not overlap)"));
        }
        if !(t.m1.is_finite() && t.m1 > t.m2) {
            return Err(invalid(
                "thresholds.m1",
                format!(
                    "orientation bounds need m1 > m2 > 1, got m1 = {} and m2 = {}",
                    t.m1, t.m2
                ),
            ));
        }
        if !(t.e1 > 0.0 && t.e2 > 0.0) {
            return Err(invalid("thresholds", "e1 and e2 must be positive"));
        }
        self.rho0.spec()?;
        match &self.xi {
            XiConfig::Fixed { value } => {
                let n = Vec3(*value).norm();
                if !(n.is_finite() && n > 1.0) {
                    return Err(invalid("xi.value", "length must exceed 1"));
                }
            }
            XiConfig::Random { min, max } => {
                if !(min.is_finite() && max.is_finite() && *min > 1.0 && max >= min) {
                    return Err(invalid("xi", "need 1 < min <= max"));
                }
            }
            XiConfig::Field => {}
        }
        if let FieldConfig::Trig { wavenumber, .. } = &self.f0 {
            if !wavenumber.is_finite() {
                return Err(invalid("f0.wavenumber", "must be finite"));
            }
        }
        let m = &self.meso;
        if let Some(d) = m.blob_delta {
            if !(d.is_finite() && d > 0.0) {
                return Err(invalid("meso.blob_delta", "must be finite and positive"));
            }
        }
        if m.quadrature.contains(&0) {
            return Err(invalid("meso.quadrature", "node counts must be positive"));
        }
        if m.grid.iter().any(|g| *g < 4) {
            return Err(invalid("meso.grid", "need at least 4 nodes per axis"));
        }
        if !(m.padding.is_finite() && m.padding >= 0.0) {
            return Err(invalid("meso.padding", "must be finite and nonnegative"));
        }
        let cv = &self.converge;
        if self.mode == Mode::Converge {
            if cv.n_list.is_empty() {
                return Err(invalid("converge.n_list", "need at least one value"));
            }
            if cv.n_list.iter().any(|n| *n < 2 || *n > MAX_PAIRS) {
                return Err(invalid(
                    "converge.n_list",
                    format!("values must lie in [2, {MAX_PAIRS}]"),
                ));
            }
        }
        if cv.replicates < 1 {
            return Err(invalid("converge.replicates", "must be at least 1"));
        }
        if cv.probes < 2 {
            return Err(invalid("converge.probes", "must be at least 2"));
        }
        if !(cv.w_resolution.is_finite() && cv.w_resolution > 0.0) {
            return Err(invalid("converge.w_resolution", "must be finite and positive"));
        }
        Ok(())
    }
}

/// Parse and validate a TOML document.
pub fn parse_config(text: &str) -> Result<ExperimentConfig, ConfigError> {
    let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| {
        let (line, column) = e
            .span()
            .map(|s| line_col(text, s.start))
            .unwrap_or((0, 0));
        ConfigError::Parse {
            line,
            column,
            message: e.message().to_string(),
        }
    })?;
    cfg.validate()?;
    Ok(cfg)
}

fn line_col(text: &str, offset: usize) -> (usize, usize) {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let column = before.len() - before.rfind('\n').map(|i| i + 1).unwrap_or(0) + 1;
    (line, column)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_micro_config_gets_defaults() {
        let c = parse_config(
            "mode = \"micro\"\nn = 64\nr0 = 0.1\nkappa_g = [0.0, 0.0, -1.0]\ndt = 0.1\nt_end = 0.5\n",
        )
        .unwrap();
        assert_eq!(c.scheme, SchemeName::Rk4);
        assert_eq!(c.cutoff(), CutoffSpec { inner: 0.25, outer: 0.5 });
    }

    #[test]
    fn parse_error_has_line() {
        let e = parse_config("mode = \"micro\"\nn = \"many\"\n").unwrap_err();
        match e {
            ConfigError::Parse { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn zero_pairs_rejected() {
        let e = parse_config("mode = \"micro\"\nn = 0\n").unwrap_err();
        assert!(matches!(e, ConfigError::Invalid { ref field, .. } if field == "n"));
    }

    #[test]
    fn inverted_orientation_bounds_rejected() {
        let e = parse_config("mode = \"micro\"\n[thresholds]\nm1 = 1.5\nm2 = 3.0\n").unwrap_err();
        let msg = e.to_string();
        assert!(msg.contains("thresholds.m1") && msg.contains("m1 > m2"), "{msg}");
    }

    #[test]
    fn unknown_key_rejected() {
        assert!(matches!(
            parse_config("mode = \"micro\"\nnn = 3\n"),
            Err(ConfigError::Parse { line: 2, .. })
        ));
    }
}
