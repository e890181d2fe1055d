use alloc::string::String;
use alloc::vec::Vec;

use crate::linalg::Vec3;

/// Errors raised by the numerical core.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("non-finite input: {0}")]
    NonFinite(&'static str),

    #[error("kernel evaluated at the origin")]
    Singular,

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("pair separation |xi| = {norm} does not exceed 1; spheres overlap")]
    Overlap { norm: f64 },

    #[error("evaluation point at distance {distance} from the pair center is inside the excluded radius {radius}")]
    OutsideValidity { distance: f64, radius: f64 },

    #[error("reflection series diverged at iteration {iteration} (ratios {ratios:?})")]
    ReflectionDivergence { iteration: usize, ratios: Vec<f64> },

    #[error("iteration did not converge after {iterations} steps (increments {history:?})")]
    NonConvergence { iterations: usize, history: Vec<f64> },

    #[error("numerical blow-up at t = {time}: {reason}")]
    BlowUp { time: f64, reason: String },

    #[error("point {point:?} lies outside the grid domain")]
    OutOfDomain { point: Vec3 },

    #[error("insufficient resolution: {0}")]
    Resolution(String),
}

pub type Result<T> = core::result::Result<T, Error>;

pub(crate) fn check_finite(v: Vec3, what: &'static str) -> Result<()> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite(what))
    }
}

pub(crate) fn check_positive(v: f64, name: &'static str) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidParameter {
            name,
            reason: alloc::format!("must be finite and positive, got {v}"),
        })
    }
}
