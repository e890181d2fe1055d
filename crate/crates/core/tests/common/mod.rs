#![allow(dead_code)]

use nalgebra::{Matrix3, Vector3};
use pairsed_core::{Mat3, Vec3};
use proptest::prelude::*;

pub fn na(m: Mat3) -> Matrix3<f64> {
    Matrix3::from_fn(|i, j| m.0[i][j])
}

pub fn na_v(v: Vec3) -> Vector3<f64> {
    Vector3::new(v[0], v[1], v[2])
}

pub fn from_na(m: &Matrix3<f64>) -> Mat3 {
    Mat3(std::array::from_fn(|i| std::array::from_fn(|j| m[(i, j)])))
}

pub fn from_na_v(v: &Vector3<f64>) -> Vec3 {
    Vec3::new(v[0], v[1], v[2])
}

/// Rotation from an axis-angle pair via the exponential of the cross-product matrix.
pub fn rotation(axis: Vec3, angle: f64) -> Mat3 {
    let a = na_v(axis).normalize() * angle;
    let k = Matrix3::new(0.0, -a[2], a[1], a[2], 0.0, -a[0], -a[1], a[0], 0.0);
    from_na(&k.exp())
}

pub fn vec3(lo: f64, hi: f64) -> impl Strategy<Value = Vec3> {
    [lo..hi, lo..hi, lo..hi].prop_map(Vec3)
}

/// Vectors with norm in `[rmin, rmax]`.
pub fn shell(rmin: f64, rmax: f64) -> impl Strategy<Value = Vec3> {
    (vec3(-1.0, 1.0), rmin..rmax)
        .prop_filter("nonzero direction", |(v, _)| v.norm() > 1e-2)
        .prop_map(|(v, r)| v * (r / v.norm()))
}

pub fn rot() -> impl Strategy<Value = Mat3> {
    (shell(1.0, 1.0 + 1e-9), 0.0..std::f64::consts::TAU).prop_map(|(a, t)| rotation(a, t))
}

pub fn rel(a: Mat3, b: Mat3) -> f64 {
    (a - b).max_abs() / b.max_abs().max(f64::MIN_POSITIVE)
}
