//! Real spherical harmonics up to degree 3.
//!
//! Basis ordering and sign convention follow the usual splatting layout:
//! band `l` occupies indices `l*l .. (l+1)*(l+1)` with `m = -l..=l`, and the
//! Condon-Shortley phase is included.

use nalgebra::Vector3;

use crate::error::{Error, Result};

pub const MAX_SH_DEGREE: usize = 3;

/// `Y_0^0`, the constant basis function.
pub const SH_C0: f64 = 0.282_094_791_773_878_14;
const SH_C1: f64 = 0.488_602_511_902_919_9;
const SH_C2: [f64; 5] = [
    1.092_548_430_592_079_2,
    -1.092_548_430_592_079_2,
    0.315_391_565_252_520_05,
    -1.092_548_430_592_079_2,
    0.546_274_215_296_039_6,
];
const SH_C3: [f64; 7] = [
    -0.590_043_589_926_643_5,
    2.890_611_442_640_554,
    -0.457_045_799_464_465_8,
    0.373_176_332_590_115_4,
    -0.457_045_799_464_465_8,
    1.445_305_721_320_277,
    -0.590_043_589_926_643_5,
];

/// Number of coefficients per channel for a given degree.
pub const fn num_coeffs(degree: usize) -> usize {
    (degree + 1) * (degree + 1)
}

/// Basis values at `dir` (assumed unit length). Entries past `num_coeffs(degree)` are zero.
pub fn basis(degree: usize, dir: &Vector3<f64>) -> [f64; 16] {
    basis_with_grad(degree, dir).0
}

/// Basis values together with their partial derivatives with respect to the
/// (already normalized) direction components.
pub fn basis_with_grad(degree: usize, dir: &Vector3<f64>) -> ([f64; 16], [[f64; 3]; 16]) {
    let (x, y, z) = (dir.x, dir.y, dir.z);
    let mut b = [0.0; 16];
    let mut g = [[0.0; 3]; 16];
    b[0] = SH_C0;
    if degree == 0 {
        return (b, g);
    }

    b[1] = -SH_C1 * y;
    g[1] = [0.0, -SH_C1, 0.0];
    b[2] = SH_C1 * z;
    g[2] = [0.0, 0.0, SH_C1];
    b[3] = -SH_C1 * x;
    g[3] = [-SH_C1, 0.0, 0.0];
    if degree == 1 {
        return (b, g);
    }

    let (xx, yy, zz) = (x * x, y * y, z * z);
    let (xy, yz, xz) = (x * y, y * z, x * z);
    b[4] = SH_C2[0] * xy;
    g[4] = [SH_C2[0] * y, SH_C2[0] * x, 0.0];
    b[5] = SH_C2[1] * yz;
    g[5] = [0.0, SH_C2[1] * z, SH_C2[1] * y];
    b[6] = SH_C2[2] * (2.0 * zz - xx - yy);
    g[6] = [-2.0 * SH_C2[2] * x, -2.0 * SH_C2[2] * y, 4.0 * SH_C2[2] * z];
    b[7] = SH_C2[3] * xz;
    g[7] = [SH_C2[3] * z, 0.0, SH_C2[3] * x];
    b[8] = SH_C2[4] * (xx - yy);
    g[8] = [2.0 * SH_C2[4] * x, -2.0 * SH_C2[4] * y, 0.0];
    if degree == 2 {
        return (b, g);
    }

    b[9] = SH_C3[0] * y * (3.0 * xx - yy);
    g[9] = [
        SH_C3[0] * 6.0 * xy,
        SH_C3[0] * (3.0 * xx - 3.0 * yy),
        0.0,
    ];
    b[10] = SH_C3[1] * xy * z;
    g[10] = [SH_C3[1] * yz, SH_C3[1] * xz, SH_C3[1] * xy];
    b[11] = SH_C3[2] * y * (4.0 * zz - xx - yy);
    g[11] = [
        SH_C3[2] * (-2.0 * xy),
        SH_C3[2] * (4.0 * zz - xx - 3.0 * yy),
        SH_C3[2] * 8.0 * yz,
    ];
    b[12] = SH_C3[3] * z * (2.0 * zz - 3.0 * xx - 3.0 * yy);
    g[12] = [
        SH_C3[3] * (-6.0 * xz),
        SH_C3[3] * (-6.0 * yz),
        SH_C3[3] * (6.0 * zz - 3.0 * xx - 3.0 * yy),
    ];
    b[13] = SH_C3[4] * x * (4.0 * zz - xx - yy);
    g[13] = [
        SH_C3[4] * (4.0 * zz - 3.0 * xx - yy),
        SH_C3[4] * (-2.0 * xy),
        SH_C3[4] * 8.0 * xz,
    ];
    b[14] = SH_C3[5] * z * (xx - yy);
    g[14] = [
        SH_C3[5] * 2.0 * xz,
        SH_C3[5] * (-2.0 * yz),
        SH_C3[5] * (xx - yy),
    ];
    b[15] = SH_C3[6] * x * (xx - 3.0 * yy);
    g[15] = [
        SH_C3[6] * (3.0 * xx - 3.0 * yy),
        SH_C3[6] * (-6.0 * xy),
        0.0,
    ];
    (b, g)
}

/// Infer the SH degree from a per-channel coefficient count.
pub fn degree_for_count(count: usize) -> Result<usize> {
    (0..=MAX_SH_DEGREE)
        .find(|&d| num_coeffs(d) == count)
        .ok_or_else(|| {
            Error::InvalidParameter(format!(
                "{count} SH coefficients per channel is not a square of 1..=4"
            ))
        })
}

/// Evaluate a single-channel coefficient vector in direction `dir`.
pub fn eval_sh(coeffs: &[f64], dir: &Vector3<f64>) -> Result<f64> {
    let degree = degree_for_count(coeffs.len())?;
    let b = basis(degree, dir);
    Ok(coeffs.iter().zip(b.iter()).map(|(c, v)| c * v).sum())
}

/// Evaluate a 3-channel coefficient vector in direction `dir`.
pub fn eval_sh_rgb(coeffs: &[[f64; 3]], dir: &Vector3<f64>) -> Result<[f64; 3]> {
    let degree = degree_for_count(coeffs.len())?;
    let b = basis(degree, dir);
    let mut out = [0.0; 3];
    for (c, v) in coeffs.iter().zip(b.iter()) {
        for ch in 0..3 {
            out[ch] += c[ch] * v;
        }
    }
    Ok(out)
}
