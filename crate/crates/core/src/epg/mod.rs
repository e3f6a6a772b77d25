//! Extended Phase Graph state of one voxel.
//!
//! Storage convention: with `f_n = ∫ Mxy(z) e^{-2πinz} dz` over one
//! dephasing cycle, `f_plus[n] = f_n` and `f_minus[n] = conj(f_{-n})`
//! for `n ≥ 0`, so `f_minus[0] = conj(f_plus[0])`. `z[n] = ∫ Mz e^{-2πinz}`.
//! The signal is `f_plus[0]`, the mean transverse magnetization `Mx + iMy`.
//!
//! In the scaled basis `(F⁺/√2, F⁻/√2, Z)` every RF rotation is unitary, so
//! `|F⁺ₙ|²/2 + |F⁻ₙ|²/2 + |Zₙ|²` is conserved per order by [`EpgState::rf_pulse`].

mod oracle;

pub use oracle::isochromat_oracle;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::sequence::Event;

const ZERO: Complex64 = Complex64 { re: 0.0, im: 0.0 };

/// 3×3 complex RF mixing matrix acting on `(F⁺ₙ, F⁻ₙ, Zₙ)` for every order.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RfRotation {
    pub m: [[Complex64; 3]; 3],
}

impl RfRotation {
    /// Rotation by `alpha` about the transverse axis at angle `phi` from x.
    pub fn new(alpha: f64, phi: f64) -> Self {
        let (sa, ca) = alpha.sin_cos();
        let c2 = Complex64::from((alpha / 2.0).cos().powi(2));
        let s2 = (alpha / 2.0).sin().powi(2);
        let e1 = Complex64::from_polar(1.0, phi);
        let e2 = Complex64::from_polar(1.0, 2.0 * phi);
        let i = Complex64::i();
        RfRotation {
            m: [
                [c2, e2 * s2, -i * e1 * sa],
                [e2.conj() * s2, c2, i * e1.conj() * sa],
                [-i * 0.5 * e1.conj() * sa, i * 0.5 * e1 * sa, Complex64::from(ca)],
            ],
        }
    }

    #[inline]
    pub fn apply(&self, v: [Complex64; 3]) -> [Complex64; 3] {
        let m = &self.m;
        [
            m[0][0] * v[0] + m[0][1] * v[1] + m[0][2] * v[2],
            m[1][0] * v[0] + m[1][1] * v[1] + m[1][2] * v[2],
            m[2][0] * v[0] + m[2][1] * v[1] + m[2][2] * v[2],
        ]
    }

    /// Conjugate transpose applied to `v`.
    #[inline]
    pub fn apply_adjoint(&self, v: [Complex64; 3]) -> [Complex64; 3] {
        let m = &self.m;
        [
            m[0][0].conj() * v[0] + m[1][0].conj() * v[1] + m[2][0].conj() * v[2],
            m[0][1].conj() * v[0] + m[1][1].conj() * v[1] + m[2][1].conj() * v[2],
            m[0][2].conj() * v[0] + m[1][2].conj() * v[1] + m[2][2].conj() * v[2],
        ]
    }
}

/// Where a shifted configuration state takes its value from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum ShiftSource {
    Plus(usize),
    MinusConj(usize),
    Minus(usize),
    PlusConj(usize),
    Lost,
}

/// Source of `f_plus[n]` after a shift by `delta` within `capacity`.
#[inline]
pub(crate) fn shift_source_plus(n: usize, delta: i32, capacity: usize) -> ShiftSource {
    let j = n as i64 - delta as i64;
    if j >= 0 {
        if j as usize <= capacity {
            ShiftSource::Plus(j as usize)
        } else {
            ShiftSource::Lost
        }
    } else if (-j) as usize <= capacity {
        ShiftSource::MinusConj((-j) as usize)
    } else {
        ShiftSource::Lost
    }
}

/// Source of `f_minus[n]` after a shift by `delta` within `capacity`.
#[inline]
pub(crate) fn shift_source_minus(n: usize, delta: i32, capacity: usize) -> ShiftSource {
    let j = -(n as i64) - delta as i64;
    if j <= 0 {
        if (-j) as usize <= capacity {
            ShiftSource::Minus((-j) as usize)
        } else {
            ShiftSource::Lost
        }
    } else if j as usize <= capacity {
        ShiftSource::PlusConj(j as usize)
    } else {
        ShiftSource::Lost
    }
}

/// Outcome of [`EpgState::prune`].
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PruneReport {
    /// Orders that were zeroed.
    pub zeroed: Vec<usize>,
    /// Upper bound on the change of any later signal sample caused by the
    /// removal: `√2` times the scaled-basis norm of the removed states.
    pub signal_bound: f64,
}

/// Fourier configuration states of one voxel.
#[derive(Clone, Debug, PartialEq)]
pub struct EpgState {
    f_plus: Vec<Complex64>,
    f_minus: Vec<Complex64>,
    z: Vec<Complex64>,
    m0: f64,
    /// Highest order that may be nonzero.
    occupied: usize,
    dropped: usize,
}

impl EpgState {
    /// Thermal equilibrium: `z[0] = m0`, everything else zero.
    pub fn equilibrium(m0: f64, capacity: usize) -> Self {
        let len = capacity.max(1) + 1;
        let mut z = vec![ZERO; len];
        z[0] = Complex64::from(m0);
        EpgState {
            f_plus: vec![ZERO; len],
            f_minus: vec![ZERO; len],
            z,
            m0,
            occupied: 0,
            dropped: 0,
        }
    }

    /// Builds a state from explicit arrays (equal lengths, at least two).
    pub fn from_parts(
        f_plus: Vec<Complex64>,
        f_minus: Vec<Complex64>,
        z: Vec<Complex64>,
        m0: f64,
    ) -> Result<Self> {
        let len = f_plus.len();
        if len < 2 || f_minus.len() != len || z.len() != len {
            return Err(Error::Dimension(format!(
                "EPG arrays must share a length >= 2, got {}, {}, {}",
                len,
                f_minus.len(),
                z.len()
            )));
        }
        Ok(EpgState {
            f_plus,
            f_minus,
            z,
            m0,
            occupied: len - 1,
            dropped: 0,
        })
    }

    /// Resets to equilibrium without reallocating.
    pub fn reset(&mut self, m0: f64) {
        self.f_plus.fill(ZERO);
        self.f_minus.fill(ZERO);
        self.z.fill(ZERO);
        self.z[0] = Complex64::from(m0);
        self.m0 = m0;
        self.occupied = 0;
        self.dropped = 0;
    }

    /// Highest representable order K.
    pub fn capacity(&self) -> usize {
        self.f_plus.len() - 1
    }

    pub fn m0(&self) -> f64 {
        self.m0
    }

    pub fn f_plus(&self) -> &[Complex64] {
        &self.f_plus
    }

    pub fn f_minus(&self) -> &[Complex64] {
        &self.f_minus
    }

    pub fn z(&self) -> &[Complex64] {
        &self.z
    }

    /// Number of configuration states pushed beyond the capacity so far.
    pub fn dropped(&self) -> usize {
        self.dropped
    }

    pub(crate) fn occupied(&self) -> usize {
        self.occupied
    }

    /// Mutable access to all three arrays; marks every order as occupied.
    pub fn parts_mut(&mut self) -> (&mut [Complex64], &mut [Complex64], &mut [Complex64]) {
        self.occupied = self.capacity();
        (&mut self.f_plus, &mut self.f_minus, &mut self.z)
    }

    /// Detectable signal, `F⁺₀`.
    #[inline]
    pub fn signal(&self) -> Complex64 {
        self.f_plus[0]
    }

    #[inline]
    pub(crate) fn order(&self, n: usize) -> [Complex64; 3] {
        [self.f_plus[n], self.f_minus[n], self.z[n]]
    }

    #[inline]
    pub(crate) fn set_order(&mut self, n: usize, v: [Complex64; 3]) {
        self.f_plus[n] = v[0];
        self.f_minus[n] = v[1];
        self.z[n] = v[2];
    }

    pub fn rf_pulse(&mut self, alpha: f64, phi: f64) {
        self.rotate(&RfRotation::new(alpha, phi));
    }

    pub fn rotate(&mut self, rf: &RfRotation) {
        for n in 0..=self.occupied {
            let v = rf.apply(self.order(n));
            self.set_order(n, v);
        }
    }

    /// Free precession by the accumulated phase `theta`.
    pub fn precess(&mut self, theta: f64) {
        let e = Complex64::from_polar(1.0, theta);
        for n in 0..=self.occupied {
            self.f_plus[n] *= e;
            self.f_minus[n] *= e.conj();
        }
    }

    /// Relaxation over `t` ms with recovery of `z[0]` towards `m0`.
    pub fn relax(&mut self, t: f64, t1: f64, t2: f64) -> Result<()> {
        if !(t >= 0.0) {
            return Err(Error::InvalidArgument(format!("relaxation interval {t} < 0")));
        }
        self.relax_factors((-t / t1).exp(), (-t / t2).exp());
        Ok(())
    }

    /// Relaxation given precomputed `E1 = e^{-t/T1}` and `E2 = e^{-t/T2}`.
    #[inline]
    pub fn relax_factors(&mut self, e1: f64, e2: f64) {
        for n in 0..=self.occupied {
            self.f_plus[n] *= e2;
            self.f_minus[n] *= e2;
            self.z[n] *= e1;
        }
        self.z[0] += self.m0 * (1.0 - e1);
    }

    /// Ideal spoiler: all transverse states vanish.
    pub fn spoil(&mut self) {
        for n in 0..=self.occupied {
            self.f_plus[n] = ZERO;
            self.f_minus[n] = ZERO;
        }
    }

    /// Scales every state, including the longitudinal ones.
    pub fn attenuate(&mut self, factor: f64) {
        for n in 0..=self.occupied {
            self.f_plus[n] *= factor;
            self.f_minus[n] *= factor;
            self.z[n] *= factor;
        }
    }

    /// Gradient dephasing by `delta` orders. Transverse states crossing
    /// `n = 0` swap between `F⁺` and conjugated `F⁻`; states pushed beyond
    /// the capacity are dropped and counted. Returns the number dropped.
    pub fn grad_shift(&mut self, delta: i32) -> usize {
        if delta == 0 {
            return 0;
        }
        let cap = self.capacity();
        let occ = self.occupied;
        let reach = (occ + delta.unsigned_abs() as usize).min(cap);
        let mut lost = 0;
        // count occupied states that leave the representable range
        let src_limit = occ;
        for n in 0..=src_limit {
            if delta > 0 {
                // f_plus[n] moves to n+delta
                if n + delta as usize > cap && self.f_plus[n] != ZERO {
                    lost += 1;
                }
            } else if n + delta.unsigned_abs() as usize > cap && self.f_minus[n] != ZERO {
                lost += 1;
            }
        }
        let old_plus = self.f_plus.clone();
        let old_minus = self.f_minus.clone();
        let pick = |s: ShiftSource| match s {
            ShiftSource::Plus(j) => old_plus[j],
            ShiftSource::MinusConj(j) => old_minus[j].conj(),
            ShiftSource::Minus(j) => old_minus[j],
            ShiftSource::PlusConj(j) => old_plus[j].conj(),
            ShiftSource::Lost => ZERO,
        };
        for n in 0..=reach {
            self.f_plus[n] = pick(shift_source_plus(n, delta, cap));
            self.f_minus[n] = pick(shift_source_minus(n, delta, cap));
        }
        self.occupied = reach;
        self.dropped += lost;
        lost
    }

    /// Zeroes every order whose combined magnitude `|F⁺ₙ|+|F⁻ₙ|+|Zₙ|`
    /// is below `epsilon`.
    pub fn prune(&mut self, epsilon: f64) -> PruneReport {
        let mut report = PruneReport::default();
        if !(epsilon > 0.0) {
            return report;
        }
        let mut removed_sq = 0.0;
        for n in 0..=self.occupied {
            let [p, m, z] = self.order(n);
            if p.norm() + m.norm() + z.norm() < epsilon {
                removed_sq += p.norm_sqr() / 2.0 + m.norm_sqr() / 2.0 + z.norm_sqr();
                self.set_order(n, [ZERO; 3]);
                report.zeroed.push(n);
            }
        }
        while self.occupied > 0 && self.order(self.occupied) == [ZERO; 3] {
            self.occupied -= 1;
        }
        report.signal_bound = std::f64::consts::SQRT_2 * removed_sq.sqrt();
        report
    }

    /// Transverse energy `Σ |F⁺ₙ|² + |F⁻ₙ|²`.
    pub fn transverse_energy(&self) -> f64 {
        self.f_plus
            .iter()
            .chain(&self.f_minus)
            .map(|c| c.norm_sqr())
            .sum()
    }
}

/// Capacity needed so no state of `events` can leave the graph: the total
/// absolute gradient moment, plus two.
pub fn required_capacity(events: &[Event]) -> usize {
    let moment: usize = events
        .iter()
        .map(|e| match e {
            Event::Grad { delta_n, .. } => delta_n.unsigned_abs() as usize,
            _ => 0,
        })
        .sum();
    moment + 2
}

/// Runs `events` on a single voxel and returns the raw `F⁺₀` at every ADC
/// event. Diffusion preparation uses `d` (mm²/s); pruning is applied after
/// each gradient when `prune_epsilon > 0`.
pub fn run_events(
    events: &[Event],
    t1: f64,
    t2: f64,
    m0: f64,
    d: f64,
    capacity: usize,
    prune_epsilon: f64,
) -> Result<Vec<Complex64>> {
    let mut state = EpgState::equilibrium(m0, capacity);
    let mut out = Vec::new();
    for e in events {
        match *e {
            Event::Pulse { alpha, phi } => state.rf_pulse(alpha, phi),
            Event::Wait { t } => state.relax(t, t1, t2)?,
            Event::Grad { delta_n, .. } => {
                state.grad_shift(delta_n);
                if prune_epsilon > 0.0 {
                    state.prune(prune_epsilon);
                }
            }
            Event::Spoil => state.spoil(),
            Event::Diffuse { b } => state.attenuate((-b * d).exp()),
            Event::Adc { .. } => out.push(state.signal()),
        }
    }
    Ok(out)
}
