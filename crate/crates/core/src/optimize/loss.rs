use crate::error::{Error, Result};
use crate::simulator::ContrastStack;

/// Where the residual is measured.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Domain {
    /// Magnitude images.
    #[default]
    Image,
    /// Complex k-space samples.
    KSpace,
}

impl Domain {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "image" => Ok(Domain::Image),
            "kspace" => Ok(Domain::KSpace),
            _ => Err(Error::InvalidArgument(format!(
                "unknown loss domain '{s}' (valid: image, kspace)"
            ))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Domain::Image => "image",
            Domain::KSpace => "kspace",
        }
    }
}

/// Weighted squared-error loss. An empty weight list weighs every contrast 1.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct LossSpec {
    pub domain: Domain,
    pub weights: Vec<f64>,
}

impl LossSpec {
    pub fn new(domain: Domain) -> Self {
        LossSpec { domain, weights: Vec::new() }
    }

    pub fn weight(&self, contrast: usize) -> f64 {
        self.weights.get(contrast).copied().unwrap_or(1.0)
    }

    pub fn validate(&self, n_contrasts: usize) -> Result<()> {
        if self.weights.is_empty() {
            return Ok(());
        }
        if self.weights.len() != n_contrasts {
            return Err(Error::Dimension(format!(
                "{} loss weights for {n_contrasts} contrasts",
                self.weights.len()
            )));
        }
        if self.weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
            return Err(Error::InvalidArgument("loss weights must be finite and >= 0".into()));
        }
        if self.weights.iter().all(|w| *w == 0.0) {
            return Err(Error::InvalidArgument("loss weights are all zero".into()));
        }
        Ok(())
    }
}

/// `Σ_c w_c Σ_i |sim_i − obs_i|²` over magnitude pixels or complex samples.
pub fn loss(sim: &ContrastStack, obs: &ContrastStack, spec: &LossSpec) -> Result<f64> {
    sim.check_congruent(obs)?;
    spec.validate(sim.len())?;
    let mut total = 0.0;
    for (c, (a, b)) in sim.contrasts.iter().zip(&obs.contrasts).enumerate() {
        let part: f64 = match spec.domain {
            Domain::Image => image_residual(&a.image, &b.image),
            Domain::KSpace => a.kspace.iter().zip(&b.kspace).map(|(x, y)| (x - y).norm_sqr()).sum(),
        };
        total += spec.weight(c) * part;
    }
    Ok(total)
}

pub(crate) fn image_residual(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}
