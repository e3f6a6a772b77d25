//! Reverse-mode gradients of the loss with respect to the probability maps.
//!
//! [`forward`] runs mix → simulate → encode → (inverse FFT → magnitude) →
//! loss and records each stage on a [`Tape`] together with the
//! intermediates its adjoint needs. [`Tape::backward`] walks the records in
//! reverse. Per-voxel EPG histories are not stored: the adjoint of a
//! simulate record replays each voxel with a local tape and discards it, so
//! memory stays proportional to the readout rows rather than to the event
//! count.

mod check;
mod voxel;

pub use check::{gradcheck, phantom_gradcheck, GateConfig, GradcheckEntry, GradcheckOptions, GradcheckReport};

use num_complex::Complex64;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::optimize::{Domain, LossSpec};
use crate::phantom::{
    mix_adjoint, mix_with_floor, ProbabilityMaps, QuantitativeGradient, QuantitativeMaps, Tissue,
    TissueTable, DEFAULT_PD_FLOOR,
};
use crate::sequence::Sequence;
use crate::simulator::{
    compile_all, encode, image_to_kspace, r2_star, reconstruct_complex, voxel_signals, Contrast,
    ContrastStack, Program, SimMode, SimOptions,
};
use voxel::{voxel_backward, Scratch};

const ZERO: Complex64 = Complex64::new(0.0, 0.0);

/// Everything that stays fixed while the maps change.
#[derive(Clone, Debug)]
pub struct Problem {
    pub table: TissueTable,
    pub programs: Vec<Program>,
    pub mode: SimMode,
    pub loss: LossSpec,
    pub observed: ContrastStack,
    pub pd_floor: f64,
}

impl Problem {
    pub fn new(
        table: TissueTable,
        sequences: &[Sequence],
        options: &SimOptions,
        loss: LossSpec,
        observed: ContrastStack,
    ) -> Result<Self> {
        table.validate()?;
        if sequences.is_empty() {
            return Err(Error::InvalidArgument("empty sequence list".into()));
        }
        let programs = compile_all(sequences, options)?;
        let labels: Vec<(String, usize)> = programs
            .iter()
            .flat_map(|p| (0..p.n_contrasts()).map(move |e| (p.name().to_string(), e)))
            .collect();
        if labels.len() != observed.len() {
            return Err(Error::Dimension(format!(
                "sequences produce {} contrasts, observation holds {}",
                labels.len(),
                observed.len()
            )));
        }
        for (i, ((name, echo), c)) in labels.iter().zip(&observed.contrasts).enumerate() {
            if *name != c.sequence || *echo != c.echo {
                return Err(Error::Dimension(format!(
                    "contrast {i}: sequence gives {name}#{echo}, observation {}#{}",
                    c.sequence, c.echo
                )));
            }
        }
        for p in &programs {
            if p.matrix() != (observed.nx, observed.ny) {
                return Err(Error::Dimension(format!(
                    "sequence '{}' is {:?}, observation {}x{}",
                    p.name(),
                    p.matrix(),
                    observed.nx,
                    observed.ny
                )));
            }
        }
        loss.validate(observed.len())?;
        Ok(Problem {
            table,
            programs,
            mode: options.mode,
            loss,
            observed,
            pd_floor: DEFAULT_PD_FLOOR,
        })
    }

    pub fn n_contrasts(&self) -> usize {
        self.observed.len()
    }
}

/// ∂loss/∂pixel for each probability channel.
#[derive(Clone, Debug, PartialEq)]
pub struct GradientMaps {
    pub width: usize,
    pub height: usize,
    pub d_csf: Vec<f64>,
    pub d_gm: Vec<f64>,
    pub d_wm: Vec<f64>,
}

impl GradientMaps {
    pub fn channel(&self, t: Tissue) -> &[f64] {
        match t {
            Tissue::Csf => &self.d_csf,
            Tissue::Gm => &self.d_gm,
            Tissue::Wm => &self.d_wm,
        }
    }

    /// `[csf…, gm…, wm…]`, the layout of [`maps_to_vec`].
    pub fn to_vec(&self) -> Vec<f64> {
        [&self.d_csf[..], &self.d_gm[..], &self.d_wm[..]].concat()
    }
}

pub fn maps_to_vec(maps: &ProbabilityMaps) -> Vec<f64> {
    [&maps.csf[..], &maps.gm[..], &maps.wm[..]].concat()
}

pub fn maps_from_vec(width: usize, height: usize, v: &[f64]) -> Result<ProbabilityMaps> {
    let n = width * height;
    if v.len() != 3 * n {
        return Err(Error::Dimension(format!("{} values for 3 maps of {n} pixels", v.len())));
    }
    ProbabilityMaps::new(width, height, v[..n].to_vec(), v[n..2 * n].to_vec(), v[2 * n..].to_vec())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Record {
    Mix,
    Simulate { program: usize },
    Encode { program: usize, first_contrast: usize },
    InverseFft { contrast: usize },
    Magnitude { contrast: usize },
    Loss,
}

/// Stage log of one forward pass.
#[derive(Clone, Debug)]
pub struct Tape<'p> {
    problem: &'p Problem,
    records: Vec<Record>,
    qmaps: Option<QuantitativeMaps>,
    /// Row amplitudes per program.
    signals: Vec<Vec<Complex64>>,
    kspace: Vec<Vec<Complex64>>,
    images: Vec<Vec<Complex64>>,
    magnitudes: Vec<Vec<f64>>,
    loss: Option<f64>,
}

impl<'p> Tape<'p> {
    /// An empty tape; [`forward`] fills it.
    pub fn new(problem: &'p Problem) -> Self {
        Tape {
            problem,
            records: Vec::new(),
            qmaps: None,
            signals: Vec::new(),
            kspace: Vec::new(),
            images: Vec::new(),
            magnitudes: Vec::new(),
            loss: None,
        }
    }

    pub fn records(&self) -> &[Record] {
        &self.records
    }

    pub fn loss(&self) -> Option<f64> {
        self.loss
    }

    /// Simulated contrasts; images are reconstructed on demand when the
    /// loss lives in k-space.
    pub fn simulated_stack(&self) -> Result<ContrastStack> {
        let obs = &self.problem.observed;
        let contrasts = self
            .kspace
            .iter()
            .enumerate()
            .map(|(c, k)| {
                let image = match self.magnitudes.get(c) {
                    Some(m) => m.clone(),
                    None => reconstruct_complex(k, obs.nx, obs.ny)?.iter().map(|z| z.norm()).collect(),
                };
                Ok(Contrast {
                    sequence: obs.contrasts[c].sequence.clone(),
                    echo: obs.contrasts[c].echo,
                    kspace: k.clone(),
                    image,
                })
            })
            .collect::<Result<_>>()?;
        Ok(ContrastStack { nx: obs.nx, ny: obs.ny, contrasts })
    }

    pub fn backward(&self, loss_adjoint: f64) -> Result<GradientMaps> {
        self.backward_traced(loss_adjoint, &mut Vec::new())
    }

    /// [`Tape::backward`] that also appends the index of every visited
    /// record to `trace`.
    pub fn backward_traced(&self, loss_adjoint: f64, trace: &mut Vec<usize>) -> Result<GradientMaps> {
        let (Some(Record::Mix), Some(Record::Loss), Some(qmaps), Some(_)) =
            (self.records.first(), self.records.last(), &self.qmaps, self.loss)
        else {
            return Err(Error::IncompleteTape(format!(
                "expected mix .. loss, got {} records",
                self.records.len()
            )));
        };
        let pb = self.problem;
        let obs = &pb.observed;
        let n = qmaps.len();
        let nc = self.kspace.len();
        let mut mbar: Vec<Vec<f64>> = vec![Vec::new(); nc];
        let mut ibar: Vec<Vec<Complex64>> = vec![Vec::new(); nc];
        let mut kbar: Vec<Vec<Complex64>> = vec![vec![ZERO; n]; nc];
        let mut sbar: Vec<Vec<Complex64>> = vec![Vec::new(); pb.programs.len()];
        let mut qbar = QuantitativeGradient::zeros(n);
        let mut out = None;

        for (idx, rec) in self.records.iter().enumerate().rev() {
            trace.push(idx);
            match *rec {
                Record::Loss => {
                    for c in 0..nc {
                        let w = 2.0 * pb.loss.weight(c) * loss_adjoint;
                        match pb.loss.domain {
                            Domain::Image => {
                                mbar[c] = self.magnitudes[c]
                                    .iter()
                                    .zip(&obs.contrasts[c].image)
                                    .map(|(a, b)| w * (a - b))
                                    .collect();
                            }
                            Domain::KSpace => {
                                for ((kb, a), b) in kbar[c].iter_mut().zip(&self.kspace[c]).zip(&obs.contrasts[c].kspace) {
                                    *kb += (a - b) * w;
                                }
                            }
                        }
                    }
                }
                Record::Magnitude { contrast: c } => {
                    ibar[c] = self.images[c]
                        .iter()
                        .zip(&mbar[c])
                        .map(|(z, mb)| {
                            let a = z.norm();
                            if a > 0.0 {
                                z * (mb / a)
                            } else {
                                ZERO
                            }
                        })
                        .collect();
                }
                Record::InverseFft { contrast: c } => {
                    let k = image_to_kspace(&ibar[c], obs.nx, obs.ny)?;
                    for (a, b) in kbar[c].iter_mut().zip(k) {
                        *a += b;
                    }
                }
                Record::Encode { program, first_contrast } => {
                    let p = &pb.programs[program];
                    let kb = &kbar[first_contrast..first_contrast + p.n_contrasts()];
                    sbar[program] = encode_adjoint(p, &self.signals[program], kb, qmaps, pb.mode, &mut qbar);
                }
                Record::Simulate { program } => {
                    let p = &pb.programs[program];
                    let sb = &sbar[program];
                    let rows = p.n_rows();
                    let grads: Vec<Option<voxel::VoxelGrad>> = (0..n)
                        .into_par_iter()
                        .map_init(
                            || (Scratch::new(p), vec![ZERO; rows]),
                            |(scratch, gathered), v| {
                                if qmaps.background_mask[v] {
                                    return None;
                                }
                                for r in 0..rows {
                                    gathered[r] = sb[r * n + v];
                                }
                                Some(voxel_backward(p, &qmaps.voxel(v), gathered, scratch))
                            },
                        )
                        .collect();
                    for (v, g) in grads.iter().enumerate() {
                        if let Some(g) = g {
                            qbar.t1[v] += g.t1;
                            qbar.t2[v] += g.t2;
                            qbar.t2_prime[v] += g.t2_prime;
                            qbar.pd[v] += g.pd;
                            qbar.d[v] += g.d;
                        }
                    }
                }
                Record::Mix => {
                    let [d_csf, d_gm, d_wm] = mix_adjoint(&pb.table, qmaps, &qbar);
                    out = Some(GradientMaps {
                        width: qmaps.width,
                        height: qmaps.height,
                        d_csf,
                        d_gm,
                        d_wm,
                    });
                }
            }
        }
        let g = out.expect("mix record checked above");
        if let Some(i) = g.to_vec().iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("gradient at parameter {i}")));
        }
        Ok(g)
    }
}

/// Adjoint of [`encode`]: k-space adjoints of one program's contrasts to
/// row-amplitude adjoints. In intra-readout mode the decay's dependence on
/// T2 and T2′ is accumulated into `qbar`.
pub(crate) fn encode_adjoint(
    program: &Program,
    signals: &[Complex64],
    kbar: &[Vec<Complex64>],
    qmaps: &QuantitativeMaps,
    mode: SimMode,
    qbar: &mut QuantitativeGradient,
) -> Vec<Complex64> {
    let (nx, ny) = program.matrix();
    let n = nx * ny;
    let scale = 1.0 / (n as f64).sqrt();
    let mut sbar = vec![ZERO; program.n_rows() * n];
    let r2s = match mode {
        SimMode::Idealized => Vec::new(),
        SimMode::IntraReadoutDecay => r2_star(qmaps),
    };
    let mut a = vec![ZERO; nx];
    for (c, segments) in program.segments.iter().enumerate() {
        let kb = &kbar[c];
        for seg in segments {
            let ey = &program.ey[seg.line * ny..(seg.line + 1) * ny];
            let dst = seg.row * n;
            match mode {
                SimMode::Idealized => {
                    a.fill(ZERO);
                    for &(s, _) in &seg.samples {
                        let ex = &program.ex[s * nx..(s + 1) * nx];
                        let k = kb[seg.line * nx + s] * scale;
                        for x in 0..nx {
                            a[x] += ex[x].conj() * k;
                        }
                    }
                    for y in 0..ny {
                        let e = ey[y].conj();
                        for x in 0..nx {
                            sbar[dst + y * nx + x] += e * a[x];
                        }
                    }
                }
                SimMode::IntraReadoutDecay => {
                    for &(s, dt) in &seg.samples {
                        let ex = &program.ex[s * nx..(s + 1) * nx];
                        let k = kb[seg.line * nx + s] * scale;
                        for y in 0..ny {
                            for x in 0..nx {
                                let v = y * nx + x;
                                if qmaps.background_mask[v] {
                                    continue;
                                }
                                let w = (ey[y] * ex[x]).conj() * k;
                                let g = (-dt * r2s[v]).exp();
                                sbar[dst + v] += w * g;
                                let sig = signals[dst + v];
                                let gb = w.re * sig.re + w.im * sig.im;
                                let t2 = qmaps.qt2[v];
                                let t2p = qmaps.qt2_prime[v];
                                qbar.t2[v] += gb * g * dt / (t2 * t2);
                                qbar.t2_prime[v] += gb * g * dt / (t2p * t2p);
                            }
                        }
                    }
                }
            }
        }
    }
    sbar
}

/// Runs the recorded forward chain and returns its tape.
pub fn forward<'p>(problem: &'p Problem, maps: &ProbabilityMaps) -> Result<Tape<'p>> {
    let obs = &problem.observed;
    if (maps.width, maps.height) != (obs.nx, obs.ny) {
        return Err(Error::Dimension(format!(
            "maps are {}x{}, observation {}x{}",
            maps.width, maps.height, obs.nx, obs.ny
        )));
    }
    let mut tape = Tape::new(problem);
    let qmaps = mix_with_floor(maps, &problem.table, problem.pd_floor)?;
    qmaps.check()?;
    tape.records.push(Record::Mix);

    let mut first = 0;
    for (pi, p) in problem.programs.iter().enumerate() {
        let signals = voxel_signals(p, &qmaps);
        tape.records.push(Record::Simulate { program: pi });
        let ks = encode(p, &signals, &qmaps, problem.mode);
        tape.signals.push(signals);
        tape.records.push(Record::Encode { program: pi, first_contrast: first });
        for k in ks {
            if problem.loss.domain == Domain::Image {
                let c = tape.kspace.len();
                let img = reconstruct_complex(&k, obs.nx, obs.ny)?;
                tape.records.push(Record::InverseFft { contrast: c });
                tape.magnitudes.push(img.iter().map(|z| z.norm()).collect());
                tape.images.push(img);
                tape.records.push(Record::Magnitude { contrast: c });
            }
            tape.kspace.push(k);
        }
        first += p.n_contrasts();
    }

    let mut total = 0.0f64;
    for c in 0..tape.kspace.len() {
        let part: f64 = match problem.loss.domain {
            Domain::Image => crate::optimize::image_residual(&tape.magnitudes[c], &obs.contrasts[c].image),
            Domain::KSpace => tape.kspace[c]
                .iter()
                .zip(&obs.contrasts[c].kspace)
                .map(|(x, y)| (x - y).norm_sqr())
                .sum(),
        };
        total += problem.loss.weight(c) * part;
    }
    if !total.is_finite() {
        return Err(Error::NonFinite(format!("loss {total}")));
    }
    tape.records.push(Record::Loss);
    tape.qmaps = Some(qmaps);
    tape.loss = Some(total);
    Ok(tape)
}

/// Loss and its gradient with respect to the maps.
pub fn loss_and_gradient(problem: &Problem, maps: &ProbabilityMaps) -> Result<(f64, GradientMaps)> {
    let tape = forward(problem, maps)?;
    let g = tape.backward(1.0)?;
    Ok((tape.loss.expect("complete tape"), g))
}
