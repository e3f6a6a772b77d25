//! Event-level pulse sequences and the FLASH variants used as contrasts.

mod presets;
mod text;

pub use presets::{
    dir_inversion_times, preset, preset_with, two_inversion_mz, PresetKind, Timing, PRESET_NAMES,
};
pub use text::{parse_sequence, write_sequence};

use std::collections::HashSet;
use std::f64::consts::{FRAC_PI_2, PI};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Axis {
    Readout,
    Phase,
}

impl Axis {
    pub fn name(self) -> &'static str {
        match self {
            Axis::Readout => "readout",
            Axis::Phase => "phase",
        }
    }
}

/// One sequence event. Angles in radians, times in ms.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Event {
    /// RF rotation by `alpha` about the transverse axis at angle `phi`.
    Pulse { alpha: f64, phi: f64 },
    /// Free relaxation.
    Wait { t: f64 },
    /// Gradient with net intravoxel moment `delta_n` dephasing cycles.
    /// Spatial encoding blips are balanced across a voxel and carry zero.
    Grad { delta_n: i32, axis: Axis },
    /// Ideal spoiler: all transverse states vanish.
    Spoil,
    /// Scalar diffusion weighting `e^{-b·D}` of all magnetization, b in s/mm².
    Diffuse { b: f64 },
    /// One k-space sample of contrast `echo`. `line`/`sample` index the
    /// centred k-space matrix (`k = index - n/2`). `phase` is the receiver
    /// demodulation phase.
    Adc {
        line: usize,
        sample: usize,
        echo: usize,
        t_since_excitation: f64,
        phase: f64,
    },
}

/// Magnetization preparation played before each imaging shot.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum PrepModule {
    None,
    Inversion { ti: f64 },
    DoubleInversion { ti1: f64, ti2: f64 },
    T2Prep { tau: f64 },
    DiffusionPrep { b: f64 },
}

impl PrepModule {
    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            PrepModule::None => true,
            PrepModule::Inversion { ti } => ti > 0.0,
            PrepModule::DoubleInversion { ti1, ti2 } => ti2 > 0.0 && ti1 > ti2,
            PrepModule::T2Prep { tau } => tau > 0.0,
            PrepModule::DiffusionPrep { b } => b >= 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!("invalid preparation {self:?}")))
        }
    }

    /// Events of the preparation, ending right before the excitation.
    pub fn events(&self) -> Vec<Event> {
        match *self {
            PrepModule::None => vec![],
            PrepModule::Inversion { ti } => vec![
                Event::Pulse { alpha: PI, phi: 0.0 },
                Event::Spoil,
                Event::Wait { t: ti },
            ],
            PrepModule::DoubleInversion { ti1, ti2 } => vec![
                Event::Pulse { alpha: PI, phi: 0.0 },
                Event::Spoil,
                Event::Wait { t: ti1 - ti2 },
                Event::Pulse { alpha: PI, phi: 0.0 },
                Event::Spoil,
                Event::Wait { t: ti2 },
            ],
            // 90x - tau/2 - 180y - tau/2 - (-90x), then crush what is left
            PrepModule::T2Prep { tau } => vec![
                Event::Pulse { alpha: FRAC_PI_2, phi: 0.0 },
                Event::Wait { t: tau / 2.0 },
                Event::Pulse { alpha: PI, phi: FRAC_PI_2 },
                Event::Wait { t: tau / 2.0 },
                Event::Pulse { alpha: FRAC_PI_2, phi: PI },
                Event::Spoil,
            ],
            PrepModule::DiffusionPrep { b } => vec![Event::Diffuse { b }],
        }
    }
}

/// Phase-encode ordering of the acquired lines.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Ordering {
    /// Top to bottom, `ky = -ny/2 .. ny/2-1`.
    #[default]
    Linear,
    /// Centre line first, then alternating outwards.
    Centric,
}

impl Ordering {
    pub fn lines(self, ny: usize) -> Vec<usize> {
        match self {
            Ordering::Linear => (0..ny).collect(),
            Ordering::Centric => {
                let c = ny / 2;
                let mut out = vec![c];
                for d in 1..=ny {
                    if c >= d {
                        out.push(c - d);
                    }
                    if c + d < ny {
                        out.push(c + d);
                    }
                    if out.len() == ny {
                        break;
                    }
                }
                out
            }
        }
    }
}

/// An ordered event program plus the bookkeeping needed to interpret it.
#[derive(Clone, Debug, PartialEq)]
pub struct Sequence {
    pub name: String,
    /// `(nx, ny)`
    pub matrix: (usize, usize),
    pub events: Vec<Event>,
    /// One entry per contrast, strictly increasing.
    pub echo_times: Vec<f64>,
    pub tr: f64,
    pub flip: f64,
    /// Preparation of each acquisition block, in block order.
    pub preps: Vec<PrepModule>,
}

impl Sequence {
    pub fn n_contrasts(&self) -> usize {
        self.echo_times.len()
    }

    pub fn adc_count(&self) -> usize {
        self.events
            .iter()
            .filter(|e| matches!(e, Event::Adc { .. }))
            .count()
    }

    /// Checks event parameters, echo ordering and that every contrast
    /// samples each k-space location exactly once.
    pub fn validate(&self) -> Result<()> {
        let (nx, ny) = self.matrix;
        if nx == 0 || ny == 0 {
            return Err(Error::InvalidArgument("empty matrix".into()));
        }
        if self.echo_times.is_empty() {
            return Err(Error::InvalidArgument("sequence has no contrasts".into()));
        }
        if self.echo_times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidArgument(format!(
                "echo times must be strictly increasing: {:?}",
                self.echo_times
            )));
        }
        let nc = self.n_contrasts();
        let mut seen = HashSet::with_capacity(nx * ny * nc);
        for (i, e) in self.events.iter().enumerate() {
            match *e {
                Event::Pulse { alpha, phi } if !(alpha.is_finite() && phi.is_finite()) => {
                    return Err(Error::InvalidArgument(format!("event {i}: non-finite pulse")));
                }
                Event::Wait { t } if !(t >= 0.0 && t.is_finite()) => {
                    return Err(Error::InvalidArgument(format!("event {i}: wait {t} must be >= 0")));
                }
                Event::Diffuse { b } if !(b >= 0.0 && b.is_finite()) => {
                    return Err(Error::InvalidArgument(format!("event {i}: b-value {b} must be >= 0")));
                }
                Event::Adc { line, sample, echo, .. } => {
                    if line >= ny || sample >= nx || echo >= nc {
                        return Err(Error::InvalidArgument(format!(
                            "event {i}: adc (echo {echo}, line {line}, sample {sample}) outside {nx}x{ny}x{nc}"
                        )));
                    }
                    if !seen.insert((echo, line, sample)) {
                        return Err(Error::InvalidArgument(format!(
                            "event {i}: k-space sample (echo {echo}, line {line}, sample {sample}) acquired twice"
                        )));
                    }
                }
                _ => {}
            }
        }
        if seen.len() != nx * ny * nc {
            return Err(Error::InvalidArgument(format!(
                "{} adc samples, expected {nx}x{ny} per contrast for {nc} contrasts",
                seen.len()
            )));
        }
        Ok(())
    }

    /// Joins acquisition blocks into one sequence whose contrasts are the
    /// blocks' contrasts in order. `echo_times` are replaced by the caller's.
    pub fn concat(name: &str, parts: Vec<Sequence>, echo_times: Vec<f64>) -> Result<Sequence> {
        let first = parts
            .first()
            .ok_or_else(|| Error::InvalidArgument("nothing to concatenate".into()))?;
        let (matrix, tr, flip) = (first.matrix, first.tr, first.flip);
        let mut events = Vec::new();
        let mut preps = Vec::new();
        let mut offset = 0;
        for p in parts {
            if p.matrix != matrix {
                return Err(Error::Dimension(format!(
                    "cannot concatenate {:?} with {:?}",
                    p.matrix, matrix
                )));
            }
            events.extend(p.events.iter().map(|e| match *e {
                Event::Adc { line, sample, echo, t_since_excitation, phase } => Event::Adc {
                    line,
                    sample,
                    echo: echo + offset,
                    t_since_excitation,
                    phase,
                },
                other => other,
            }));
            offset += p.n_contrasts();
            preps.extend(p.preps);
        }
        if echo_times.len() != offset {
            return Err(Error::InvalidArgument(format!(
                "{} echo times for {offset} contrasts",
                echo_times.len()
            )));
        }
        let seq = Sequence {
            name: name.to_string(),
            matrix,
            events,
            echo_times,
            tr,
            flip,
            preps,
        };
        seq.validate()?;
        Ok(seq)
    }
}

/// Parameters of a spoiled multi-echo FLASH acquisition.
#[derive(Clone, Debug, PartialEq)]
pub struct FlashParams {
    pub matrix: (usize, usize),
    /// rad
    pub flip: f64,
    /// ms
    pub tr: f64,
    /// ms, one readout per entry
    pub echo_times: Vec<f64>,
    pub prep: PrepModule,
    /// Unacquired repetitions played first (steady-state acquisitions).
    pub dummies: usize,
    /// Recovery delay after the saturation that starts every prepared
    /// shot, ms. Unused when `prep` is `None`.
    pub recovery: f64,
    pub ordering: Ordering,
    /// ADC dwell time, ms.
    pub dwell: f64,
    /// Quadratic RF-spoiling increment, rad.
    pub rf_spoil_increment: f64,
    pub name: String,
}

impl FlashParams {
    pub fn new(matrix: (usize, usize), flip: f64, tr: f64, echo_times: Vec<f64>, prep: PrepModule) -> Self {
        FlashParams {
            matrix,
            flip,
            tr,
            echo_times,
            prep,
            dummies: 0,
            recovery: 20_000.0,
            ordering: Ordering::Linear,
            dwell: 0.05,
            rf_spoil_increment: 117f64.to_radians(),
            name: "flash".into(),
        }
    }
}

/// Spoiled FLASH. Without preparation the lines follow `dummies`
/// steady-state repetitions. With preparation every line is its own shot:
/// saturation, recovery, preparation, then one excitation with all echoes,
/// so each shot starts from the same state.
pub fn build_flash(p: &FlashParams) -> Result<Sequence> {
    let (nx, ny) = p.matrix;
    if nx == 0 || ny == 0 {
        return Err(Error::InvalidArgument("empty matrix".into()));
    }
    if p.echo_times.is_empty() || p.echo_times.len() > 8 {
        return Err(Error::InvalidArgument(format!(
            "need 1..=8 echo times, got {}",
            p.echo_times.len()
        )));
    }
    if p.echo_times[0] <= 0.0 || p.echo_times.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::InvalidArgument(format!(
            "echo times must be positive and strictly increasing: {:?}",
            p.echo_times
        )));
    }
    let half_readout = (nx as f64 / 2.0) * p.dwell;
    let last = *p.echo_times.last().unwrap();
    if last + half_readout >= p.tr {
        return Err(Error::InvalidArgument(format!(
            "echo at {last} ms (readout ends {} ms) does not fit in TR {} ms",
            last + half_readout,
            p.tr
        )));
    }
    if p.echo_times[0] - half_readout < 0.0 {
        return Err(Error::InvalidArgument("first readout starts before the excitation".into()));
    }
    p.prep.validate()?;

    let mut events = Vec::new();
    let mut excitation = 0usize;
    let mut spoil_phase = 0.0f64;
    let mut next_phase = |excitation: &mut usize| {
        spoil_phase = (spoil_phase + *excitation as f64 * p.rf_spoil_increment) % std::f64::consts::TAU;
        *excitation += 1;
        spoil_phase
    };

    let prepared = p.prep != PrepModule::None;
    if !prepared {
        for _ in 0..p.dummies {
            let phi = next_phase(&mut excitation);
            events.push(Event::Pulse { alpha: p.flip, phi });
            events.push(Event::Spoil);
            events.push(Event::Wait { t: p.tr });
        }
    }
    let prep_events = p.prep.events();
    for line in p.ordering.lines(ny) {
        if prepared {
            events.push(Event::Pulse { alpha: FRAC_PI_2, phi: 0.0 });
            events.push(Event::Spoil);
            events.push(Event::Wait { t: p.recovery });
            events.extend_from_slice(&prep_events);
        }
        let phi = next_phase(&mut excitation);
        events.push(Event::Pulse { alpha: p.flip, phi });
        events.push(Event::Grad { delta_n: 0, axis: Axis::Phase });
        let mut now = 0.0;
        for (echo, &te) in p.echo_times.iter().enumerate() {
            events.push(Event::Wait { t: te - now });
            now = te;
            for sample in 0..nx {
                events.push(Event::Adc {
                    line,
                    sample,
                    echo,
                    t_since_excitation: te + (sample as f64 - nx as f64 / 2.0) * p.dwell,
                    phase: phi - FRAC_PI_2,
                });
            }
        }
        events.push(Event::Spoil);
        events.push(Event::Wait { t: p.tr - now });
    }
    let seq = Sequence {
        name: p.name.clone(),
        matrix: p.matrix,
        events,
        echo_times: p.echo_times.clone(),
        tr: p.tr,
        flip: p.flip,
        preps: vec![p.prep],
    };
    seq.validate()?;
    Ok(seq)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(prep: PrepModule) -> FlashParams {
        FlashParams::new((8, 8), 15f64.to_radians(), 20.0, vec![4.0, 9.0, 14.0, 19.0], prep)
    }

    #[test]
    fn adc_count_contract() {
        let seq = build_flash(&params(PrepModule::None)).unwrap();
        assert_eq!(seq.adc_count(), 8 * 8 * 4);
        let seq = build_flash(&params(PrepModule::Inversion { ti: 500.0 })).unwrap();
        assert_eq!(seq.adc_count(), 8 * 8 * 4);
    }

    #[test]
    fn echo_beyond_tr_is_rejected() {
        let mut p = params(PrepModule::None);
        p.echo_times = vec![4.0, 25.0];
        assert!(build_flash(&p).is_err());
        p.echo_times = vec![];
        assert!(build_flash(&p).is_err());
        p.echo_times = vec![9.0, 4.0];
        assert!(build_flash(&p).is_err());
    }

    #[test]
    fn centric_ordering_visits_every_line_once() {
        for ny in [1, 2, 8, 16] {
            let mut lines = Ordering::Centric.lines(ny);
            assert_eq!(lines[0], ny / 2);
            lines.sort();
            assert_eq!(lines, (0..ny).collect::<Vec<_>>());
        }
    }

    #[test]
    fn rf_spoiling_is_quadratic() {
        let mut p = params(PrepModule::None);
        p.dummies = 3;
        let seq = build_flash(&p).unwrap();
        let phases: Vec<f64> = seq
            .events
            .iter()
            .filter_map(|e| match e {
                Event::Pulse { phi, .. } => Some(*phi),
                _ => None,
            })
            .take(4)
            .collect();
        let inc = 117f64.to_radians();
        for (k, phi) in phases.iter().enumerate() {
            let expected = (inc * (k * (k + 1) / 2) as f64).rem_euclid(std::f64::consts::TAU);
            assert!((phi - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn validation_catches_duplicates() {
        let mut seq = build_flash(&params(PrepModule::None)).unwrap();
        let dup = *seq.events.iter().find(|e| matches!(e, Event::Adc { .. })).unwrap();
        seq.events.push(dup);
        assert!(seq.validate().is_err());
    }

    #[test]
    fn concat_offsets_echoes() {
        let mut a = params(PrepModule::T2Prep { tau: 40.0 });
        a.echo_times = vec![4.0];
        let mut b = a.clone();
        b.prep = PrepModule::T2Prep { tau: 80.0 };
        let seq = Sequence::concat(
            "t2",
            vec![build_flash(&a).unwrap(), build_flash(&b).unwrap()],
            vec![44.0, 84.0],
        )
        .unwrap();
        assert_eq!(seq.n_contrasts(), 2);
        assert_eq!(seq.preps.len(), 2);
    }
}
