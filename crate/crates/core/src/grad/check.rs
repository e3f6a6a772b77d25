//! Central-difference verification of analytic gradients.

use std::fmt;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{forward, maps_from_vec, maps_to_vec, Problem};
use crate::error::{Error, Result};
use crate::optimize::{Domain, LossSpec};
use crate::phantom::{synth_phantom, TissueTable};
use crate::sequence::{preset_with, PresetKind, Timing};
use crate::simulator::{simulate_stack, SimMode, SimOptions};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GradcheckOptions {
    pub eps: f64,
    /// Coordinates to probe; all of them when the vector is shorter.
    pub samples: usize,
    pub seed: u64,
}

impl Default for GradcheckOptions {
    fn default() -> Self {
        GradcheckOptions { eps: 1e-4, samples: 32, seed: 0 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GradcheckEntry {
    pub coordinate: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_err: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradcheckReport {
    pub entries: Vec<GradcheckEntry>,
    pub max_rel_err: f64,
}

impl fmt::Display for GradcheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:>10} {:>16} {:>16} {:>10}", "coordinate", "analytic", "numeric", "rel err")?;
        for e in &self.entries {
            writeln!(
                f,
                "{:>10} {:>16.9e} {:>16.9e} {:>10.2e}",
                e.coordinate, e.analytic, e.numeric, e.rel_err
            )?;
        }
        write!(f, "max rel err {:.3e}", self.max_rel_err)
    }
}

pub fn relative_error(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-8)
}

/// Compares `analytic` against central differences of `f` on a random
/// subsample of coordinates.
pub fn gradcheck<F>(mut f: F, params: &[f64], analytic: &[f64], opts: &GradcheckOptions) -> Result<GradcheckReport>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    if params.len() != analytic.len() {
        return Err(Error::Dimension(format!(
            "{} parameters but {} gradient entries",
            params.len(),
            analytic.len()
        )));
    }
    let mut coords: Vec<usize> = if params.len() <= opts.samples {
        (0..params.len()).collect()
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
        rand::seq::index::sample(&mut rng, params.len(), opts.samples).into_vec()
    };
    coords.sort_unstable();
    let mut x = params.to_vec();
    let mut entries = Vec::with_capacity(coords.len());
    for &i in &coords {
        let orig = x[i];
        x[i] = orig + opts.eps;
        let up = f(&x)?;
        x[i] = orig - opts.eps;
        let down = f(&x)?;
        x[i] = orig;
        let numeric = (up - down) / (2.0 * opts.eps);
        entries.push(GradcheckEntry {
            coordinate: i,
            analytic: analytic[i],
            numeric,
            rel_err: relative_error(analytic[i], numeric),
        });
    }
    let max_rel_err = entries.iter().map(|e| e.rel_err).fold(0.0, f64::max);
    Ok(GradcheckReport { entries, max_rel_err })
}

/// Gradient gate on a synthetic phantom: maps from one seed are pulled
/// away from the box edges, the observation comes from the next seed.
#[derive(Clone, Debug, PartialEq)]
pub struct GateConfig {
    pub size: usize,
    pub preset: PresetKind,
    pub echoes: usize,
    pub domain: Domain,
    pub mode: SimMode,
    pub seed: u64,
    pub check: GradcheckOptions,
}

impl Default for GateConfig {
    fn default() -> Self {
        GateConfig {
            size: 8,
            preset: PresetKind::T1Ir,
            echoes: 2,
            domain: Domain::Image,
            mode: SimMode::Idealized,
            seed: 1,
            check: GradcheckOptions::default(),
        }
    }
}

pub fn phantom_gradcheck(cfg: &GateConfig) -> Result<GradcheckReport> {
    let table = TissueTable::default();
    let mut timing = Timing::default();
    if cfg.echoes == 0 || cfg.echoes > timing.echo_times.len() {
        return Err(Error::InvalidArgument(format!("echoes must be 1..=4, got {}", cfg.echoes)));
    }
    timing.echo_times.truncate(cfg.echoes);
    timing.t2prep_taus.truncate(cfg.echoes);
    let n = cfg.size;
    let seq = preset_with(cfg.preset, (n, n), &table, &timing)?;
    let options = SimOptions { mode: cfg.mode, ..SimOptions::default() };
    let truth = synth_phantom(cfg.seed + 1, n)?;
    let observed = simulate_stack(&truth, &table, std::slice::from_ref(&seq), &options)?;
    let problem = Problem::new(table, &[seq], &options, LossSpec::new(cfg.domain), observed)?;

    let mut maps = synth_phantom(cfg.seed, n)?;
    for ch in [&mut maps.csf, &mut maps.gm, &mut maps.wm] {
        for v in ch.iter_mut() {
            *v = 0.1 + 0.8 * *v;
        }
    }
    let params = maps_to_vec(&maps);
    let analytic = forward(&problem, &maps)?.backward(1.0)?.to_vec();
    let f = |x: &[f64]| {
        let m = maps_from_vec(n, n, x)?;
        Ok(forward(&problem, &m)?.loss().expect("complete tape"))
    };
    gradcheck(f, &params, &analytic, &cfg.check)
}
