//! Numerical core for dilute suspensions of rigid sphere pairs settling in Stokes flow.
//!
//! The crate is `no_std` and only needs an allocator.

#![no_std]

extern crate alloc;

pub mod density;
pub mod error;
pub mod kernels;
pub mod linalg;
pub mod meso;
pub mod metrics;
pub mod micro;
pub mod neighbors;
pub mod pair;
pub mod quadrature;
pub mod reflections;

pub use error::{Error, Result};
pub use linalg::{Mat3, Vec3};
