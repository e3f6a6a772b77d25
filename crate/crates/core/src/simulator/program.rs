//! A sequence lowered to a flat list of voxel operations. Repeated RF
//! rotations and wait durations are interned so per-voxel constants are
//! computed once, consecutive waits are merged, and ADC samples read from
//! the same state share one readout row.

use std::collections::HashMap;

use num_complex::Complex64;

use super::SimOptions;
use crate::epg::{required_capacity, EpgState, RfRotation};
use crate::error::{Error, Result};
use crate::phantom::TissueParams;
use crate::sequence::{Event, Sequence};

#[derive(Clone, Copy, Debug, PartialEq)]
pub(crate) enum Op {
    Rf(usize),
    Relax(usize),
    Shift(i32),
    Spoil,
    Diffuse(f64),
    Readout(usize),
}

/// One sampled state: every ADC sample of a segment reads this value.
#[derive(Clone, Debug)]
pub(crate) struct Row {
    /// Receiver demodulation `e^{-iφ}`.
    pub rx: Complex64,
    /// Free precession time since the last RF pulse.
    pub t_exc: f64,
}

/// Samples of one k-space line that come from the same row; `dt` is the
/// offset of each sample from the row's reference time.
#[derive(Clone, Debug)]
pub(crate) struct Segment {
    pub row: usize,
    pub line: usize,
    pub samples: Vec<(usize, f64)>,
}

#[derive(Clone, Debug)]
pub struct Program {
    pub(crate) name: String,
    pub(crate) nx: usize,
    pub(crate) ny: usize,
    pub(crate) n_contrasts: usize,
    pub(crate) capacity: usize,
    pub(crate) prune_epsilon: f64,
    pub(crate) ops: Vec<Op>,
    pub(crate) rf: Vec<RfRotation>,
    pub(crate) durations: Vec<f64>,
    pub(crate) rows: Vec<Row>,
    /// Per contrast.
    pub(crate) segments: Vec<Vec<Segment>>,
    /// `e^{-2πi(s - nx/2)x/nx}` at `[s * nx + x]`.
    pub(crate) ex: Vec<Complex64>,
    /// `e^{-2πi(l - ny/2)y/ny}` at `[l * ny + y]`.
    pub(crate) ey: Vec<Complex64>,
}

fn encoding_table(n: usize) -> Vec<Complex64> {
    let mut t = Vec::with_capacity(n * n);
    for k in 0..n {
        let kc = k as f64 - (n / 2) as f64;
        for x in 0..n {
            // reduce the product first so the angle stays small
            let m = (kc * x as f64).rem_euclid(n as f64);
            t.push(Complex64::from_polar(1.0, -std::f64::consts::TAU * m / n as f64));
        }
    }
    t
}

impl Program {
    pub fn compile(seq: &Sequence, options: &SimOptions) -> Result<Program> {
        seq.validate()?;
        let (nx, ny) = seq.matrix;
        let capacity = options
            .capacity
            .unwrap_or_else(|| required_capacity(&seq.events));
        let mut p = Program {
            name: seq.name.clone(),
            nx,
            ny,
            n_contrasts: seq.n_contrasts(),
            capacity,
            prune_epsilon: options.prune_epsilon,
            ops: Vec::new(),
            rf: Vec::new(),
            durations: Vec::new(),
            rows: Vec::new(),
            segments: vec![Vec::new(); seq.n_contrasts()],
            ex: encoding_table(nx),
            ey: encoding_table(ny),
        };
        let mut rf_ids: HashMap<(u64, u64), usize> = HashMap::new();
        let mut wait_ids: HashMap<u64, usize> = HashMap::new();
        let mut pending = 0.0;
        let mut t_exc = 0.0;
        // (row, contrast, line, phase bits) of the row being read out
        let mut open: Option<(usize, usize, usize, u64)> = None;

        for e in &seq.events {
            if let Event::Wait { t } = *e {
                if !(t >= 0.0) {
                    return Err(Error::InvalidArgument(format!("negative wait {t}")));
                }
                pending += t;
                t_exc += t;
                if t > 0.0 {
                    open = None;
                }
                continue;
            }
            if pending > 0.0 {
                let id = *wait_ids.entry(pending.to_bits()).or_insert_with(|| {
                    p.durations.push(pending);
                    p.durations.len() - 1
                });
                p.ops.push(Op::Relax(id));
                pending = 0.0;
            }
            match *e {
                Event::Pulse { alpha, phi } => {
                    let id = *rf_ids.entry((alpha.to_bits(), phi.to_bits())).or_insert_with(|| {
                        p.rf.push(RfRotation::new(alpha, phi));
                        p.rf.len() - 1
                    });
                    p.ops.push(Op::Rf(id));
                    t_exc = 0.0;
                    open = None;
                }
                Event::Grad { delta_n, .. } => {
                    if delta_n != 0 {
                        p.ops.push(Op::Shift(delta_n));
                        open = None;
                    }
                }
                Event::Spoil => {
                    p.ops.push(Op::Spoil);
                    open = None;
                }
                Event::Diffuse { b } => {
                    p.ops.push(Op::Diffuse(b));
                    open = None;
                }
                Event::Adc { line, sample, echo, t_since_excitation, phase } => {
                    let row = match open {
                        Some((r, c, l, ph)) if c == echo && l == line && ph == phase.to_bits() => r,
                        _ => {
                            p.rows.push(Row {
                                rx: Complex64::from_polar(1.0, -phase),
                                t_exc,
                            });
                            let r = p.rows.len() - 1;
                            p.ops.push(Op::Readout(r));
                            p.segments[echo].push(Segment { row: r, line, samples: Vec::new() });
                            open = Some((r, echo, line, phase.to_bits()));
                            r
                        }
                    };
                    let seg = p.segments[echo].last_mut().expect("segment opened with row");
                    debug_assert_eq!(seg.row, row);
                    seg.samples.push((sample, t_since_excitation - t_exc));
                }
                Event::Wait { .. } => unreachable!(),
            }
        }
        Ok(p)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn n_contrasts(&self) -> usize {
        self.n_contrasts
    }

    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn matrix(&self) -> (usize, usize) {
        (self.nx, self.ny)
    }

    pub(crate) fn relax_factors(&self, p: &TissueParams) -> Vec<(f64, f64)> {
        self.durations
            .iter()
            .map(|t| ((-t / p.t1).exp(), (-t / p.t2).exp()))
            .collect()
    }

    /// Readout coefficient `e^{-iφ}·e^{-t_exc/T2′}` of `row`.
    #[inline]
    pub(crate) fn readout_coeff(&self, row: usize, t2_prime: f64) -> Complex64 {
        let r = &self.rows[row];
        r.rx * (-r.t_exc / t2_prime).exp()
    }

    /// Runs one voxel and writes one complex echo amplitude per row.
    pub(crate) fn run_voxel(&self, p: &TissueParams, state: &mut EpgState, out: &mut [Complex64]) {
        state.reset(p.pd);
        let relax = self.relax_factors(p);
        let eps = self.prune_epsilon * p.pd;
        for op in &self.ops {
            match *op {
                Op::Rf(i) => state.rotate(&self.rf[i]),
                Op::Relax(k) => state.relax_factors(relax[k].0, relax[k].1),
                Op::Shift(d) => {
                    state.grad_shift(d);
                    if eps > 0.0 {
                        state.prune(eps);
                    }
                }
                Op::Spoil => state.spoil(),
                Op::Diffuse(b) => state.attenuate((-b * p.d).exp()),
                Op::Readout(r) => out[r] = state.signal() * self.readout_coeff(r, p.t2_prime),
            }
        }
    }
}
