use std::f64::consts::LN_2;

use super::{build_flash, FlashParams, Ordering, PrepModule, Sequence};
use crate::error::{Error, Result};
use crate::phantom::TissueTable;

pub const PRESET_NAMES: [&str; 6] = ["t1ir", "me_flash", "t2prep", "dir", "flair", "dwi"];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum PresetKind {
    T1Ir,
    MeFlash,
    T2Prep,
    Dir,
    Flair,
    Dwi,
}

impl PresetKind {
    pub const ALL: [PresetKind; 6] = [
        PresetKind::T1Ir,
        PresetKind::MeFlash,
        PresetKind::T2Prep,
        PresetKind::Dir,
        PresetKind::Flair,
        PresetKind::Dwi,
    ];

    pub fn name(self) -> &'static str {
        PRESET_NAMES[self as usize]
    }

    pub fn parse(name: &str) -> Result<Self> {
        PRESET_NAMES
            .iter()
            .position(|n| *n == name.trim())
            .map(|i| PresetKind::ALL[i])
            .ok_or_else(|| Error::UnknownPreset {
                name: name.to_string(),
                valid: PRESET_NAMES.join(", "),
            })
    }
}

/// Default timing of the preset family. Everything is overridable.
#[derive(Clone, Debug, PartialEq)]
pub struct Timing {
    /// rad
    pub flip: f64,
    pub tr: f64,
    pub echo_times: Vec<f64>,
    pub t1ir_ti: f64,
    pub t2prep_taus: Vec<f64>,
    /// TE of each T2-prepared readout.
    pub t2prep_te: f64,
    /// s/mm²
    pub dwi_b: f64,
    /// Saturation-recovery delay before prepared shots; `None` uses 5·max T1.
    pub recovery: Option<f64>,
    /// Steady-state dummies; `None` uses ceil(5·max T1 / TR).
    pub dummies: Option<usize>,
    pub ordering: Ordering,
    pub dwell: f64,
}

impl Default for Timing {
    fn default() -> Self {
        Timing {
            flip: 15f64.to_radians(),
            tr: 20.0,
            echo_times: vec![4.0, 9.0, 14.0, 19.0],
            t1ir_ti: 800.0,
            t2prep_taus: vec![40.0, 80.0, 120.0, 160.0],
            t2prep_te: 4.0,
            dwi_b: 1000.0,
            recovery: None,
            dummies: None,
            ordering: Ordering::Linear,
            dwell: 0.05,
        }
    }
}

impl Timing {
    fn recovery(&self, table: &TissueTable) -> f64 {
        self.recovery.unwrap_or(5.0 * table.max_t1())
    }

    fn dummies(&self, table: &TissueTable) -> usize {
        self.dummies
            .unwrap_or_else(|| (5.0 * table.max_t1() / self.tr).ceil() as usize)
    }
}

/// Preset by name with default timing.
pub fn preset(name: &str, matrix: (usize, usize), table: &TissueTable) -> Result<Sequence> {
    preset_with(PresetKind::parse(name)?, matrix, table, &Timing::default())
}

pub fn preset_with(
    kind: PresetKind,
    matrix: (usize, usize),
    table: &TissueTable,
    timing: &Timing,
) -> Result<Sequence> {
    table.validate()?;
    let recovery = timing.recovery(table);
    let flash = |prep: PrepModule, echo_times: Vec<f64>| {
        let mut p = FlashParams::new(matrix, timing.flip, timing.tr, echo_times, prep);
        p.recovery = recovery;
        p.ordering = timing.ordering;
        p.dwell = timing.dwell;
        p.name = kind.name().to_string();
        p
    };
    let echoes = timing.echo_times.clone();
    match kind {
        PresetKind::MeFlash => {
            let mut p = flash(PrepModule::None, echoes);
            p.dummies = timing.dummies(table);
            build_flash(&p)
        }
        PresetKind::T1Ir => build_flash(&flash(PrepModule::Inversion { ti: timing.t1ir_ti }, echoes)),
        PresetKind::Flair => {
            let ti = LN_2 * table.csf.t1;
            build_flash(&flash(PrepModule::Inversion { ti }, echoes))
        }
        PresetKind::Dir => {
            let (ti1, ti2) = dir_inversion_times(table.csf.t1, table.wm.t1, recovery)?;
            build_flash(&flash(PrepModule::DoubleInversion { ti1, ti2 }, echoes))
        }
        PresetKind::Dwi => build_flash(&flash(PrepModule::DiffusionPrep { b: timing.dwi_b }, echoes)),
        PresetKind::T2Prep => {
            let blocks = timing
                .t2prep_taus
                .iter()
                .map(|&tau| build_flash(&flash(PrepModule::T2Prep { tau }, vec![timing.t2prep_te])))
                .collect::<Result<Vec<_>>>()?;
            let effective = timing.t2prep_taus.iter().map(|tau| tau + timing.t2prep_te).collect();
            Sequence::concat(kind.name(), blocks, effective)
        }
    }
}

/// Longitudinal magnetization (in units of M0) at the excitation of a
/// saturation-recovery shot followed by inversions at `ti1` and `ti2`
/// before the excitation. `ti2 = None` gives a single inversion at `ti1`.
pub fn two_inversion_mz(t1: f64, recovery: f64, ti1: f64, ti2: Option<f64>) -> f64 {
    let ma = 1.0 - (-recovery / t1).exp();
    match ti2 {
        None => 1.0 - (1.0 + ma) * (-ti1 / t1).exp(),
        Some(ti2) => {
            let mb = 1.0 - (1.0 + ma) * (-(ti1 - ti2) / t1).exp();
            1.0 - (1.0 + mb) * (-ti2 / t1).exp()
        }
    }
}

fn bisect(mut lo: f64, mut hi: f64, tol: f64, f: impl Fn(f64) -> f64) -> Option<f64> {
    let (mut flo, fhi) = (f(lo), f(hi));
    if flo == 0.0 {
        return Some(lo);
    }
    if fhi == 0.0 {
        return Some(hi);
    }
    if flo.signum() == fhi.signum() {
        return None;
    }
    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        let fm = f(mid);
        if fm == 0.0 {
            return Some(mid);
        }
        if fm.signum() == flo.signum() {
            lo = mid;
            flo = fm;
        } else {
            hi = mid;
        }
    }
    Some(0.5 * (lo + hi))
}

/// Inversion times `(ti1, ti2)` of a double inversion that nulls both the
/// long-T1 and the short-T1 tissue, by nested bisection to 0.1 ms: for each
/// `ti1` the inner search nulls the short-T1 tissue with `ti2`, the outer
/// search moves `ti1` until the long-T1 tissue is nulled too.
pub fn dir_inversion_times(t1_long: f64, t1_short: f64, recovery: f64) -> Result<(f64, f64)> {
    const TOL: f64 = 0.1;
    let inner = |ti1: f64| {
        bisect(TOL, ti1 - TOL, TOL / 16.0, |ti2| {
            two_inversion_mz(t1_short, recovery, ti1, Some(ti2))
        })
    };
    let outer = |ti1: f64| match inner(ti1) {
        Some(ti2) => two_inversion_mz(t1_long, recovery, ti1, Some(ti2)),
        None => f64::NAN,
    };
    let hi = 10.0 * t1_long;
    let lo = 2.0 * t1_short;
    let ti1 = bisect(lo, hi, TOL / 16.0, outer).ok_or_else(|| {
        Error::InvalidArgument(format!(
            "no double-inversion timing nulls T1 = {t1_long} and {t1_short} ms"
        ))
    })?;
    let ti2 = inner(ti1).expect("inner bracket exists at the solution");
    Ok((ti1, ti2))
}
