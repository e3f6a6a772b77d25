//! Brute-force Bloch simulation of an isochromat ensemble spread uniformly
//! over one dephasing cycle. EPG is the Fourier transform of this ensemble,
//! so both must agree on every ADC sample.

use std::f64::consts::TAU;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::sequence::Event;

/// Right-handed rotation by `alpha` about the transverse axis at angle `phi`.
fn rotation(alpha: f64, phi: f64) -> [[f64; 3]; 3] {
    let (kx, ky) = (phi.cos(), phi.sin());
    let (s, c) = alpha.sin_cos();
    let t = 1.0 - c;
    [
        [c + kx * kx * t, kx * ky * t, ky * s],
        [kx * ky * t, c + ky * ky * t, -kx * s],
        [-ky * s, kx * s, c],
    ]
}

/// Mean transverse magnetization `Mx + iMy` of `n_isochromats` spins at each
/// ADC event. Gradient moments are integer cycles per voxel by type.
pub fn isochromat_oracle(
    events: &[Event],
    n_isochromats: usize,
    t1: f64,
    t2: f64,
    m0: f64,
) -> Result<Vec<Complex64>> {
    if n_isochromats < 64 {
        return Err(Error::InvalidArgument(format!(
            "isochromat oracle needs at least 64 spins, got {n_isochromats}"
        )));
    }
    let n = n_isochromats;
    let mut mx = vec![0.0; n];
    let mut my = vec![0.0; n];
    let mut mz = vec![m0; n];
    let mut out = Vec::new();
    for e in events {
        match *e {
            Event::Pulse { alpha, phi } => {
                let r = rotation(alpha, phi);
                for j in 0..n {
                    let v = [mx[j], my[j], mz[j]];
                    mx[j] = r[0][0] * v[0] + r[0][1] * v[1] + r[0][2] * v[2];
                    my[j] = r[1][0] * v[0] + r[1][1] * v[1] + r[1][2] * v[2];
                    mz[j] = r[2][0] * v[0] + r[2][1] * v[1] + r[2][2] * v[2];
                }
            }
            Event::Wait { t } => {
                if t < 0.0 {
                    return Err(Error::InvalidArgument(format!("wait {t} < 0")));
                }
                let (e1, e2) = ((-t / t1).exp(), (-t / t2).exp());
                for j in 0..n {
                    mx[j] *= e2;
                    my[j] *= e2;
                    mz[j] = mz[j] * e1 + m0 * (1.0 - e1);
                }
            }
            Event::Grad { delta_n, .. } => {
                for j in 0..n {
                    let phase = TAU * delta_n as f64 * j as f64 / n as f64;
                    let m = Complex64::new(mx[j], my[j]) * Complex64::from_polar(1.0, phase);
                    mx[j] = m.re;
                    my[j] = m.im;
                }
            }
            Event::Spoil => {
                mx.fill(0.0);
                my.fill(0.0);
            }
            Event::Diffuse { .. } => {
                return Err(Error::InvalidArgument(
                    "the isochromat oracle does not model diffusion attenuation".into(),
                ))
            }
            Event::Adc { .. } => {
                let sx: f64 = mx.iter().sum();
                let sy: f64 = my.iter().sum();
                out.push(Complex64::new(sx, sy) / n as f64);
            }
        }
    }
    Ok(out)
}
