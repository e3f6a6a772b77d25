use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::ProbabilityMaps;
use crate::error::{Error, Result};

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Deterministic brain-like slice: a CSF rim around a GM cortex band, a WM
/// core and a pair of CSF ventricles, all with soft partial-volume edges.
/// Pixels outside the head are empty. Channel sums never exceed one.
pub fn synth_phantom(seed: u64, size: usize) -> Result<ProbabilityMaps> {
    if size < 8 {
        return Err(Error::InvalidArgument(format!(
            "phantom size must be at least 8, got {size}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    // boundary radii in normalised coordinates [-1, 1]
    let r_head = rng.gen_range(0.92..0.97);
    let r_brain = r_head - rng.gen_range(0.24..0.27);
    let r_wm = r_brain - rng.gen_range(0.2..0.23);
    let wobble: Vec<(f64, f64)> = (2..5)
        .map(|k| (rng.gen_range(-0.04..0.04) / k as f64, rng.gen_range(0.0..std::f64::consts::TAU)))
        .collect();
    let centre = (rng.gen_range(-0.02..0.02), rng.gen_range(-0.02..0.02));
    let vent_sep = rng.gen_range(0.14..0.2);
    let vent_r = rng.gen_range(0.09..0.12);
    let vent_tilt = rng.gen_range(-0.3..0.3f64);
    let ventricles = [
        (vent_sep * vent_tilt.cos(), vent_sep * vent_tilt.sin()),
        (-vent_sep * vent_tilt.cos(), -vent_sep * vent_tilt.sin()),
    ];

    // edge width of roughly 0.4 px
    let edge = 0.8 / size as f64;
    let n = size * size;
    let mut maps = ProbabilityMaps::constant(size, size, 0.0);
    for y in 0..size {
        for x in 0..size {
            let u = (x as f64 + 0.5) / size as f64 * 2.0 - 1.0 - centre.0;
            let v = (y as f64 + 0.5) / size as f64 * 2.0 - 1.0 - centre.1;
            let r = u.hypot(v);
            let angle = v.atan2(u);
            let scale = 1.0
                + wobble
                    .iter()
                    .enumerate()
                    .map(|(k, (a, p))| a * ((k as f64 + 2.0) * angle + p).cos())
                    .sum::<f64>();

            let head = sigmoid((r_head * scale - r) / edge);
            let brain = sigmoid((r_brain * scale - r) / edge).min(head);
            let core = sigmoid((r_wm * scale - r) / edge);
            let vent = ventricles
                .iter()
                .map(|(cx, cy)| sigmoid((vent_r - (u - cx).hypot(v - cy)) / edge))
                .fold(0.0, f64::max);

            let i = y * size + x;
            maps.wm[i] = brain * core * (1.0 - vent);
            maps.gm[i] = brain * (1.0 - core) * (1.0 - vent);
            maps.csf[i] = (head - brain) + brain * vent;
        }
    }
    // drop numerically negligible tails so the background is exactly empty
    for ch in [&mut maps.csf, &mut maps.gm, &mut maps.wm] {
        for v in ch.iter_mut() {
            if *v < 1e-4 {
                *v = 0.0;
            }
        }
    }
    debug_assert_eq!(maps.len(), n);
    Ok(maps)
}
