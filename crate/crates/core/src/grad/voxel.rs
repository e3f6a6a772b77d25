//! Adjoint of one voxel's EPG program. The forward pass is replayed with a
//! small tape (occupancy per op, pre-states of relax/diffuse ops, pruned
//! orders) and then walked backwards.

use num_complex::Complex64;

use crate::epg::{shift_source_minus, shift_source_plus, EpgState, ShiftSource};
use crate::phantom::TissueParams;
use crate::simulator::{Op, Program};

const ZERO: Complex64 = Complex64::new(0.0, 0.0);

/// Gradient of a scalar with respect to one voxel's parameters.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub(crate) struct VoxelGrad {
    pub t1: f64,
    pub t2: f64,
    pub t2_prime: f64,
    pub pd: f64,
    pub d: f64,
}

/// Reusable buffers for one worker thread.
pub(crate) struct Scratch {
    state: EpgState,
    occ: Vec<u32>,
    arena: Vec<Complex64>,
    pruned: Vec<Vec<usize>>,
    out: Vec<Complex64>,
    lp: Vec<Complex64>,
    lm: Vec<Complex64>,
    lz: Vec<Complex64>,
    tp: Vec<Complex64>,
    tm: Vec<Complex64>,
}

impl Scratch {
    pub(crate) fn new(program: &Program) -> Self {
        let state = EpgState::equilibrium(1.0, program.capacity);
        let len = state.capacity() + 1;
        Scratch {
            state,
            occ: Vec::with_capacity(program.ops.len()),
            arena: Vec::new(),
            pruned: Vec::new(),
            out: vec![ZERO; program.rows.len()],
            lp: vec![ZERO; len],
            lm: vec![ZERO; len],
            lz: vec![ZERO; len],
            tp: vec![ZERO; len],
            tm: vec![ZERO; len],
        }
    }
}

fn save_state(arena: &mut Vec<Complex64>, s: &EpgState) {
    let occ = s.occupied();
    arena.extend_from_slice(&s.f_plus()[..=occ]);
    arena.extend_from_slice(&s.f_minus()[..=occ]);
    arena.extend_from_slice(&s.z()[..=occ]);
}

/// Adjoint of [`EpgState::grad_shift`] on orders `0..=reach`. Inputs are
/// the output adjoints `lp`, `lm`; results land in `tp`, `tm`.
pub(crate) fn shift_adjoint(
    lp: &[Complex64],
    lm: &[Complex64],
    tp: &mut [Complex64],
    tm: &mut [Complex64],
    delta: i32,
    reach: usize,
) {
    let cap = lp.len() - 1;
    tp.fill(ZERO);
    tm.fill(ZERO);
    for n in 0..=reach {
        match shift_source_plus(n, delta, cap) {
            ShiftSource::Plus(j) => tp[j] += lp[n],
            ShiftSource::MinusConj(j) => tm[j] += lp[n].conj(),
            ShiftSource::Lost => {}
            _ => unreachable!(),
        }
        match shift_source_minus(n, delta, cap) {
            ShiftSource::Minus(j) => tm[j] += lm[n],
            ShiftSource::PlusConj(j) => tp[j] += lm[n].conj(),
            ShiftSource::Lost => {}
            _ => unreachable!(),
        }
    }
}

#[inline]
fn re_dot(a: &[Complex64], b: &[Complex64]) -> f64 {
    a.iter().zip(b).map(|(a, b)| a.re * b.re + a.im * b.im).sum()
}

/// Gradient of `Re Σ_r conj(sig_bar[r])·row_r` with respect to the voxel
/// parameters, where `row_r` is the amplitude [`Program::run_voxel`]
/// writes for row `r`.
pub(crate) fn voxel_backward(
    program: &Program,
    p: &TissueParams,
    sig_bar: &[Complex64],
    s: &mut Scratch,
) -> VoxelGrad {
    let relax = program.relax_factors(p);
    let eps = program.prune_epsilon * p.pd;
    let prune = eps > 0.0;

    // taped replay
    s.state.reset(p.pd);
    s.occ.clear();
    s.arena.clear();
    s.pruned.clear();
    for op in &program.ops {
        s.occ.push(s.state.occupied() as u32);
        match *op {
            Op::Rf(i) => s.state.rotate(&program.rf[i]),
            Op::Relax(k) => {
                save_state(&mut s.arena, &s.state);
                s.state.relax_factors(relax[k].0, relax[k].1);
            }
            Op::Shift(d) => {
                s.state.grad_shift(d);
                if prune {
                    s.pruned.push(s.state.prune(eps).zeroed);
                }
            }
            Op::Spoil => s.state.spoil(),
            Op::Diffuse(b) => {
                save_state(&mut s.arena, &s.state);
                s.state.attenuate((-b * p.d).exp());
            }
            Op::Readout(r) => s.out[r] = s.state.signal() * program.readout_coeff(r, p.t2_prime),
        }
    }

    let mut g = VoxelGrad::default();
    s.lp.fill(ZERO);
    s.lm.fill(ZERO);
    s.lz.fill(ZERO);
    let mut hi = 0usize;
    let mut end = s.arena.len();
    for (i, op) in program.ops.iter().enumerate().rev() {
        let occ = s.occ[i] as usize;
        match *op {
            Op::Readout(r) => {
                let c = program.readout_coeff(r, p.t2_prime);
                s.lp[0] += c.conj() * sig_bar[r];
                let t = program.rows[r].t_exc;
                let rb = sig_bar[r];
                let o = s.out[r];
                g.t2_prime += (rb.re * o.re + rb.im * o.im) * t / (p.t2_prime * p.t2_prime);
            }
            Op::Rf(k) => {
                let rf = &program.rf[k];
                for n in 0..=occ {
                    let v = rf.apply_adjoint([s.lp[n], s.lm[n], s.lz[n]]);
                    s.lp[n] = v[0];
                    s.lm[n] = v[1];
                    s.lz[n] = v[2];
                }
            }
            Op::Relax(k) => {
                let m = occ + 1;
                let start = end - 3 * m;
                let x = &s.arena[start..end];
                end = start;
                let (e1, e2) = relax[k];
                let t = program.durations[k];
                let de2 = re_dot(&s.lp[..m], &x[..m]) + re_dot(&s.lm[..m], &x[m..2 * m]);
                let de1 = re_dot(&s.lz[..m], &x[2 * m..]) - p.pd * s.lz[0].re;
                g.pd += (1.0 - e1) * s.lz[0].re;
                g.t1 += de1 * e1 * t / (p.t1 * p.t1);
                g.t2 += de2 * e2 * t / (p.t2 * p.t2);
                for n in 0..=occ {
                    s.lp[n] *= e2;
                    s.lm[n] *= e2;
                    s.lz[n] *= e1;
                }
            }
            Op::Diffuse(b) => {
                let m = occ + 1;
                let start = end - 3 * m;
                let x = &s.arena[start..end];
                end = start;
                let a = (-b * p.d).exp();
                let da = re_dot(&s.lp[..m], &x[..m])
                    + re_dot(&s.lm[..m], &x[m..2 * m])
                    + re_dot(&s.lz[..m], &x[2 * m..]);
                g.d += da * (-b * a);
                for n in 0..=occ {
                    s.lp[n] *= a;
                    s.lm[n] *= a;
                    s.lz[n] *= a;
                }
            }
            Op::Spoil => {
                for n in 0..=occ {
                    s.lp[n] = ZERO;
                    s.lm[n] = ZERO;
                }
            }
            Op::Shift(d) => {
                if prune {
                    for n in s.pruned.pop().expect("one prune record per shift") {
                        s.lp[n] = ZERO;
                        s.lm[n] = ZERO;
                        s.lz[n] = ZERO;
                    }
                }
                let cap = s.lp.len() - 1;
                let reach = (occ + d.unsigned_abs() as usize).min(cap);
                shift_adjoint(&s.lp, &s.lm, &mut s.tp, &mut s.tm, d, reach);
                std::mem::swap(&mut s.lp, &mut s.tp);
                std::mem::swap(&mut s.lm, &mut s.tm);
                hi = hi.max(cap);
            }
        }
        // orders above the input occupancy hold structural zeros upstream
        for n in occ + 1..=hi {
            s.lp[n] = ZERO;
            s.lm[n] = ZERO;
            s.lz[n] = ZERO;
        }
        hi = occ;
    }
    // equilibrium z[0] = m0
    g.pd += s.lz[0].re;
    g
}
