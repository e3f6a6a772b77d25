//! Radix-2 FFTs with unitary scaling (`1/√N` in both directions).

use num_complex::Complex64;

use crate::error::{Error, Result};

fn check_pow2(nx: usize, ny: usize, len: usize) -> Result<()> {
    if nx * ny != len {
        return Err(Error::Dimension(format!(
            "buffer of {len} samples is not {nx}x{ny}"
        )));
    }
    for (axis, n) in [("width", nx), ("height", ny)] {
        if !n.is_power_of_two() {
            return Err(Error::Dimension(format!(
                "{axis} {n} is not a power of two; zero-pad to {}",
                n.next_power_of_two()
            )));
        }
    }
    Ok(())
}

/// In-place unnormalized transform; `sign` is the exponent sign.
fn fft1(buf: &mut [Complex64], sign: f64) {
    let n = buf.len();
    if n <= 1 {
        return;
    }
    let bits = n.trailing_zeros();
    for i in 0..n {
        let j = i.reverse_bits() >> (usize::BITS - bits);
        if j > i {
            buf.swap(i, j);
        }
    }
    let mut len = 2;
    while len <= n {
        let half = len / 2;
        // direct twiddles, no recurrence, to keep round-off at 1e-16
        let tw: Vec<Complex64> = (0..half)
            .map(|k| Complex64::from_polar(1.0, sign * std::f64::consts::TAU * k as f64 / len as f64))
            .collect();
        for start in (0..n).step_by(len) {
            for k in 0..half {
                let a = buf[start + k];
                let b = buf[start + k + half] * tw[k];
                buf[start + k] = a + b;
                buf[start + k + half] = a - b;
            }
        }
        len <<= 1;
    }
}

fn fft2_signed(data: &[Complex64], nx: usize, ny: usize, sign: f64) -> Result<Vec<Complex64>> {
    check_pow2(nx, ny, data.len())?;
    let mut out = data.to_vec();
    for row in out.chunks_mut(nx) {
        fft1(row, sign);
    }
    let mut col = vec![Complex64::new(0.0, 0.0); ny];
    for x in 0..nx {
        for y in 0..ny {
            col[y] = out[y * nx + x];
        }
        fft1(&mut col, sign);
        for y in 0..ny {
            out[y * nx + x] = col[y];
        }
    }
    let scale = 1.0 / ((nx * ny) as f64).sqrt();
    for v in &mut out {
        *v *= scale;
    }
    Ok(out)
}

/// Forward unitary 2-D DFT of a row-major `nx × ny` matrix.
pub fn fft2(data: &[Complex64], nx: usize, ny: usize) -> Result<Vec<Complex64>> {
    fft2_signed(data, nx, ny, -1.0)
}

/// Inverse of [`fft2`].
pub fn ifft2(data: &[Complex64], nx: usize, ny: usize) -> Result<Vec<Complex64>> {
    fft2_signed(data, nx, ny, 1.0)
}

/// Multiplies by `(-1)^(x+y)`, which moves the DC term between index 0 and
/// the centre `(nx/2, ny/2)`. It is its own inverse.
pub(crate) fn checker(data: &mut [Complex64], nx: usize) {
    for (i, v) in data.iter_mut().enumerate() {
        if (i % nx + i / nx) % 2 == 1 {
            *v = -*v;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn dft2(data: &[Complex64], nx: usize, ny: usize) -> Vec<Complex64> {
        let mut out = vec![Complex64::new(0.0, 0.0); nx * ny];
        for ky in 0..ny {
            for kx in 0..nx {
                let mut acc = Complex64::new(0.0, 0.0);
                for y in 0..ny {
                    for x in 0..nx {
                        let ph = -std::f64::consts::TAU
                            * ((kx * x) as f64 / nx as f64 + (ky * y) as f64 / ny as f64);
                        acc += data[y * nx + x] * Complex64::from_polar(1.0, ph);
                    }
                }
                out[ky * nx + kx] = acc / ((nx * ny) as f64).sqrt();
            }
        }
        out
    }

    fn random(rng: &mut ChaCha8Rng, n: usize) -> Vec<Complex64> {
        (0..n)
            .map(|_| Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
            .collect()
    }

    fn norm(v: &[Complex64]) -> f64 {
        v.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt()
    }

    #[test]
    fn zeros_and_constants() {
        let z = vec![Complex64::new(0.0, 0.0); 16];
        assert!(fft2(&z, 4, 4).unwrap().iter().all(|c| c.norm() == 0.0));
        let c = vec![Complex64::new(0.7, 0.0); 64];
        let k = fft2(&c, 8, 8).unwrap();
        assert!((k[0] - Complex64::new(0.7 * 8.0, 0.0)).norm() < 1e-12);
        assert!(k[1..].iter().all(|v| v.norm() < 1e-12));
    }

    #[test]
    fn matches_direct_dft_and_parseval() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for (nx, ny) in [(8, 8), (4, 16), (1, 2)] {
            let x = random(&mut rng, nx * ny);
            let k = fft2(&x, nx, ny).unwrap();
            let d = dft2(&x, nx, ny);
            for (a, b) in k.iter().zip(&d) {
                assert!((a - b).norm() < 1e-12);
            }
            assert!((norm(&k) - norm(&x)).abs() < 1e-12);
            let back = ifft2(&k, nx, ny).unwrap();
            for (a, b) in back.iter().zip(&x) {
                assert!((a - b).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn rejects_non_power_of_two() {
        let x = vec![Complex64::new(0.0, 0.0); 12];
        let err = fft2(&x, 4, 3).unwrap_err();
        assert!(err.to_string().contains("zero-pad to 4"));
        assert!(fft2(&x, 4, 4).is_err());
    }
}
