//! Map estimation: projected Adam on the simulated-vs-observed loss, plus
//! the ablation harness.

mod ablation;
mod loss;
mod param;

pub use ablation::{run_ablation, AblationInputs, AblationKind, AblationRow, AblationTable, Subject};
pub use loss::{loss, Domain, LossSpec};
pub use param::Parameterization;

pub(crate) use loss::image_residual;

use std::path::Path;

use crate::error::{Error, Result};
use crate::grad::{forward, Problem};
use crate::phantom::{ProbabilityMaps, Tissue, TissueTable};
use crate::sequence::Sequence;
use crate::simulator::{ContrastStack, SimOptions};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Optimizer {
    #[default]
    Adam,
    Sgd,
}

impl Optimizer {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "adam" => Ok(Optimizer::Adam),
            "sgd" => Ok(Optimizer::Sgd),
            _ => Err(Error::InvalidArgument(format!("unknown optimizer '{s}' (valid: adam, sgd)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct OptimConfig {
    pub epochs: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Seeds synthetic subjects in the ablation harness; estimation itself
    /// is deterministic.
    pub seed: u64,
    /// `[csf, gm, wm]`; frozen maps are taken from `fixed`.
    pub free_maps: [bool; 3],
    pub init: f64,
    pub optimizer: Optimizer,
    /// Values of the frozen maps.
    pub fixed: Option<ProbabilityMaps>,
}

impl Default for OptimConfig {
    fn default() -> Self {
        OptimConfig {
            epochs: 501,
            lr: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            seed: 0,
            free_maps: [true; 3],
            init: 1.0 / 3.0,
            optimizer: Optimizer::Adam,
            fixed: None,
        }
    }
}

impl OptimConfig {
    pub fn validate(&self) -> Result<()> {
        self.validate_hyper()?;
        if self.free_maps.iter().any(|f| !f) && self.fixed.is_none() {
            return Err(Error::InvalidArgument("frozen maps need fixed values".into()));
        }
        Ok(())
    }

    /// Checks the step hyperparameters without requiring `fixed`.
    pub fn validate_hyper(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::InvalidArgument(format!("learning rate must be > 0, got {}", self.lr)));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::InvalidArgument("Adam betas must lie in [0, 1)".into()));
        }
        if !(self.eps > 0.0) {
            return Err(Error::InvalidArgument("Adam eps must be > 0".into()));
        }
        if !self.free_maps.iter().any(|f| *f) {
            return Err(Error::InvalidArgument("no free maps".into()));
        }
        Ok(())
    }

    /// Parses a comma list such as `csf,gm`.
    pub fn parse_free_maps(s: &str) -> Result<[bool; 3]> {
        let mut out = [false; 3];
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            out[Tissue::parse(part)?.index()] = true;
        }
        Ok(out)
    }
}

/// First and second moment estimates.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

impl AdamState {
    pub fn new(n: usize) -> Self {
        AdamState { m: vec![0.0; n], v: vec![0.0; n], t: 0 }
    }
}

/// One optimizer update without projection. Errors on a non-finite
/// gradient entry, naming its index.
pub fn optimizer_update(params: &mut [f64], grads: &[f64], state: &mut AdamState, config: &OptimConfig) -> Result<()> {
    if params.len() != grads.len() || state.m.len() != params.len() {
        return Err(Error::Dimension(format!(
            "{} parameters, {} gradients, {} moments",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    if let Some(i) = grads.iter().position(|g| !g.is_finite()) {
        return Err(Error::NonFinite(format!("gradient entry {i} is {}", grads[i])));
    }
    state.t += 1;
    match config.optimizer {
        Optimizer::Sgd => {
            for (p, g) in params.iter_mut().zip(grads) {
                *p -= config.lr * g;
            }
        }
        Optimizer::Adam => {
            let c1 = 1.0 - config.beta1.powi(state.t as i32);
            let c2 = 1.0 - config.beta2.powi(state.t as i32);
            for i in 0..params.len() {
                let g = grads[i];
                state.m[i] = config.beta1 * state.m[i] + (1.0 - config.beta1) * g;
                state.v[i] = config.beta2 * state.v[i] + (1.0 - config.beta2) * g * g;
                let mh = state.m[i] / c1;
                let vh = state.v[i] / c2;
                params[i] -= config.lr * mh / (vh.sqrt() + config.eps);
            }
        }
    }
    if let Some(i) = params.iter().position(|p| !p.is_finite()) {
        return Err(Error::NonFinite(format!("step {} left parameter {i} at {}", state.t, params[i])));
    }
    Ok(())
}

/// Optimizer update followed by projection onto `[0, 1]`.
pub fn adam_step(params: &mut [f64], grads: &[f64], state: &mut AdamState, config: &OptimConfig) -> Result<()> {
    optimizer_update(params, grads, state, config)?;
    for p in params {
        *p = p.clamp(0.0, 1.0);
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq)]
pub struct Estimate {
    pub maps: ProbabilityMaps,
    /// Loss at the start of every epoch.
    pub history: Vec<f64>,
}

impl Estimate {
    pub fn write_history(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["epoch", "loss"])?;
        for (i, l) in self.history.iter().enumerate() {
            w.write_record([i.to_string(), format!("{l:e}")])?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

fn apply_fixed(maps: &mut ProbabilityMaps, config: &OptimConfig) {
    if let Some(fixed) = &config.fixed {
        for t in Tissue::ALL {
            if !config.free_maps[t.index()] {
                *maps.channel_mut(t) = fixed.channel(t).to_vec();
            }
        }
    }
}

/// Runs the optimization on a prepared problem.
pub fn estimate_problem(problem: &Problem, param: &Parameterization, config: &OptimConfig) -> Result<Estimate> {
    config.validate()?;
    let (w, h) = (problem.observed.nx, problem.observed.ny);
    let n = w * h;
    param.validate(w, h)?;
    if let Some(f) = &config.fixed {
        if (f.width, f.height) != (w, h) {
            return Err(Error::Dimension(format!("fixed maps are {}x{}, expected {w}x{h}", f.width, f.height)));
        }
    }
    let mut params = param.init(n, config.init);
    let mut state = AdamState::new(params.len());
    let mut history = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let mut maps = param.realize(&params, w, h)?;
        apply_fixed(&mut maps, config);
        let tape = forward(problem, &maps).map_err(|e| annotate(e, epoch))?;
        history.push(tape.loss().expect("complete tape"));
        let g = tape.backward(1.0).map_err(|e| annotate(e, epoch))?;
        let mut g = g.to_vec();
        for t in Tissue::ALL {
            if !config.free_maps[t.index()] {
                g[t.index() * n..(t.index() + 1) * n].fill(0.0);
            }
        }
        let pg = param.pullback(&params, &g, n);
        if let Some(i) = pg.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!(
                "gradient at epoch {epoch}, {}",
                param.describe(i, n)
            )));
        }
        optimizer_update(&mut params, &pg, &mut state, config)?;
        param.project(&mut params);
    }
    let mut maps = param.realize(&params, w, h)?;
    apply_fixed(&mut maps, config);
    Ok(Estimate { maps, history })
}

fn annotate(e: Error, epoch: usize) -> Error {
    match e {
        Error::NonFinite(s) => Error::NonFinite(format!("epoch {epoch}: {s}")),
        other => other,
    }
}

/// Estimates probability maps that reproduce `observed` through `sequences`.
pub fn estimate(
    observed: &ContrastStack,
    sequences: &[Sequence],
    table: &TissueTable,
    param: &Parameterization,
    loss: &LossSpec,
    config: &OptimConfig,
    sim: &SimOptions,
) -> Result<Estimate> {
    let problem = Problem::new(*table, sequences, sim, loss.clone(), observed.clone())?;
    estimate_problem(&problem, param, config)
}
