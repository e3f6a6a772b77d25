//! Run configuration as `key = value` text.
//!
//! Blank lines and `#` comments are ignored. Lists are comma separated.
//! Tissue parameters use dotted keys such as `gm.t1 = 1100`.

use std::path::Path;

use crate::error::{Error, Result};
use crate::optimize::{Domain, LossSpec, OptimConfig, Optimizer};
use crate::phantom::{Tissue, TissueTable};
use crate::sequence::{Ordering, Timing};
use crate::simulator::{SimMode, SimOptions};

/// Everything a batch run can override.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub table: TissueTable,
    pub optim: OptimConfig,
    pub loss: LossSpec,
    pub sim: SimOptions,
    pub timing: Timing,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            table: TissueTable::default(),
            optim: OptimConfig::default(),
            loss: LossSpec::new(Domain::Image),
            sim: SimOptions::default(),
            timing: Timing::default(),
        }
    }
}

fn number<T: std::str::FromStr>(v: &str) -> std::result::Result<T, String> {
    v.parse().map_err(|_| format!("'{v}' is not a valid number"))
}

fn list(v: &str) -> std::result::Result<Vec<f64>, String> {
    v.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(number)
        .collect()
}

fn text<T>(r: Result<T>) -> std::result::Result<T, String> {
    r.map_err(|e| e.to_string())
}

fn ordering(v: &str) -> std::result::Result<Ordering, String> {
    match v {
        "linear" => Ok(Ordering::Linear),
        "centric" => Ok(Ordering::Centric),
        _ => Err(format!("unknown ordering '{v}' (valid: linear, centric)")),
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let fail = |reason: String| Error::Parse { line: i + 1, reason };
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| fail(format!("expected 'key = value', got '{line}'")))?;
            cfg.set(key.trim(), value.trim()).map_err(fail)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    fn set(&mut self, key: &str, v: &str) -> std::result::Result<(), String> {
        match key {
            "epochs" => self.optim.epochs = number(v)?,
            "lr" => self.optim.lr = number(v)?,
            "beta1" => self.optim.beta1 = number(v)?,
            "beta2" => self.optim.beta2 = number(v)?,
            "eps" => self.optim.eps = number(v)?,
            "seed" => self.optim.seed = number(v)?,
            "init" => self.optim.init = number(v)?,
            "optimizer" => self.optim.optimizer = text(Optimizer::parse(v))?,
            "free_maps" => self.optim.free_maps = text(OptimConfig::parse_free_maps(v))?,
            "loss.domain" => self.loss.domain = text(Domain::parse(v))?,
            "loss.weights" => self.loss.weights = list(v)?,
            "mode" => self.sim.mode = text(SimMode::parse(v))?,
            "prune_epsilon" => self.sim.prune_epsilon = number(v)?,
            "capacity" => self.sim.capacity = Some(number(v)?),
            "flip_deg" => self.timing.flip = number::<f64>(v)?.to_radians(),
            "tr" => self.timing.tr = number(v)?,
            "echo_times" => self.timing.echo_times = list(v)?,
            "t1ir_ti" => self.timing.t1ir_ti = number(v)?,
            "t2prep_taus" => self.timing.t2prep_taus = list(v)?,
            "t2prep_te" => self.timing.t2prep_te = number(v)?,
            "dwi_b" => self.timing.dwi_b = number(v)?,
            "recovery" => self.timing.recovery = Some(number(v)?),
            "dummies" => self.timing.dummies = Some(number(v)?),
            "ordering" => self.timing.ordering = ordering(v)?,
            "dwell" => self.timing.dwell = number(v)?,
            _ => return self.set_tissue(key, v),
        }
        Ok(())
    }

    fn set_tissue(&mut self, key: &str, v: &str) -> std::result::Result<(), String> {
        let unknown = || format!("unknown key '{key}'");
        let (tissue, field) = key.split_once('.').ok_or_else(unknown)?;
        let tissue = Tissue::parse(tissue).map_err(|_| unknown())?;
        let p = self.table.get_mut(tissue);
        let slot = match field {
            "t1" => &mut p.t1,
            "t2" => &mut p.t2,
            "t2_prime" => &mut p.t2_prime,
            "pd" => &mut p.pd,
            "d" => &mut p.d,
            _ => return Err(unknown()),
        };
        *slot = number(v)?;
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.table.validate()?;
        self.optim.validate_hyper()?;
        if !(self.sim.prune_epsilon >= 0.0) {
            return Err(Error::InvalidArgument("prune_epsilon must be >= 0".into()));
        }
        let t = &self.timing;
        if !(t.tr > 0.0) || !(t.dwell > 0.0) || !(t.flip.is_finite()) {
            return Err(Error::InvalidArgument("tr and dwell must be > 0".into()));
        }
        if t.echo_times.is_empty() || t.t2prep_taus.is_empty() {
            return Err(Error::InvalidArgument("echo_times and t2prep_taus must be non-empty".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_text_gives_defaults() {
        assert_eq!(RunConfig::parse("# nothing\n\n").unwrap(), RunConfig::default());
    }

    #[test]
    fn every_group_is_settable() {
        let cfg = RunConfig::parse(
            "epochs = 12\nlr=0.5\noptimizer = sgd\nfree_maps = csf, wm\n\
             loss.domain = kspace\nloss.weights = 1, 2\nmode = intra_readout_decay\n\
             capacity = 40\nflip_deg = 90\necho_times = 3,5\nordering = centric\n\
             gm.t1 = 1200 # trailing comment\ndummies = 7\n",
        )
        .unwrap();
        assert_eq!(cfg.optim.epochs, 12);
        assert_eq!(cfg.optim.lr, 0.5);
        assert_eq!(cfg.optim.optimizer, Optimizer::Sgd);
        assert_eq!(cfg.optim.free_maps, [true, false, true]);
        assert_eq!(cfg.loss.domain, Domain::KSpace);
        assert_eq!(cfg.loss.weights, vec![1.0, 2.0]);
        assert_eq!(cfg.sim.mode, SimMode::IntraReadoutDecay);
        assert_eq!(cfg.sim.capacity, Some(40));
        assert!((cfg.timing.flip - std::f64::consts::FRAC_PI_2).abs() < 1e-15);
        assert_eq!(cfg.timing.echo_times, vec![3.0, 5.0]);
        assert_eq!(cfg.timing.ordering, Ordering::Centric);
        assert_eq!(cfg.timing.dummies, Some(7));
        assert_eq!(cfg.table.gm.t1, 1200.0);
    }

    #[test]
    fn errors_carry_line_numbers() {
        let err = RunConfig::parse("epochs = 3\n\nbogus = 1\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 3, .. }), "{err}");
        let err = RunConfig::parse("lr = fast").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 1, .. }));
        assert!(RunConfig::parse("gm.t3 = 1").is_err());
        assert!(RunConfig::parse("bone.t1 = 1").is_err());
        assert!(RunConfig::parse("no equals sign").is_err());
    }

    #[test]
    fn invalid_values_are_rejected() {
        assert!(RunConfig::parse("lr = -1").is_err());
        assert!(RunConfig::parse("wm.t2 = 0").is_err());
        assert!(RunConfig::parse("echo_times = ").is_err());
    }
}
