//! Forward model: quantitative maps and a sequence in, Cartesian k-space
//! and magnitude images out.
//!
//! Every non-background voxel runs its own EPG through a compiled
//! [`Program`]. The echo amplitude read at each ADC row is then encoded with
//! the explicit phase `e^{-2πi(kx·x/nx + ky·y/ny)}` (centred `k`) and unitary
//! scaling `1/√(nx·ny)`, so a voxel-constant amplitude image and its k-space
//! have equal L2 norms.

mod export;
mod fft;
mod program;

pub use export::{load_stack, save_stack, write_pgm};
pub use fft::{fft2, ifft2};
pub use program::Program;

pub(crate) use fft::checker;
pub(crate) use program::Op;


use num_complex::Complex64;
use rayon::prelude::*;

use crate::epg::EpgState;
use crate::error::{Error, Result};
use crate::phantom::{mix, ProbabilityMaps, QuantitativeMaps, TissueTable};
use crate::sequence::Sequence;

const ZERO: Complex64 = Complex64::new(0.0, 0.0);

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum SimMode {
    /// Each sample carries its row's echo amplitude unchanged.
    #[default]
    Idealized,
    /// Samples decay by `e^{-Δt/T2*}` relative to the row's echo time.
    IntraReadoutDecay,
}

impl SimMode {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "idealized" => Ok(SimMode::Idealized),
            "intra_readout_decay" => Ok(SimMode::IntraReadoutDecay),
            _ => Err(Error::InvalidArgument(format!(
                "unknown simulation mode '{s}' (valid: idealized, intra_readout_decay)"
            ))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SimOptions {
    pub mode: SimMode,
    /// Pruning threshold relative to the voxel's `m0`, applied after each
    /// dephasing gradient. Zero disables pruning.
    pub prune_epsilon: f64,
    /// Overrides the EPG capacity derived from the sequence.
    pub capacity: Option<usize>,
}

impl Default for SimOptions {
    fn default() -> Self {
        SimOptions {
            mode: SimMode::Idealized,
            prune_epsilon: 1e-6,
            capacity: None,
        }
    }
}

/// K-space per contrast, row-major `[line * nx + sample]`, DC at
/// `(nx/2, ny/2)`.
#[derive(Clone, Debug, PartialEq)]
pub struct KSpace {
    pub nx: usize,
    pub ny: usize,
    pub data: Vec<Vec<Complex64>>,
}

/// Magnitude image per contrast, row-major `[y * nx + x]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    pub nx: usize,
    pub ny: usize,
    pub data: Vec<Vec<f64>>,
}

/// Per-voxel echo amplitudes of every row, laid out `[row * n_voxels + v]`.
/// Background voxels are zero.
pub(crate) fn voxel_signals(program: &Program, qmaps: &QuantitativeMaps) -> Vec<Complex64> {
    let n = qmaps.len();
    let rows = program.n_rows();
    let per_voxel: Vec<Option<Vec<Complex64>>> = (0..n)
        .into_par_iter()
        .map_init(
            || EpgState::equilibrium(1.0, program.capacity),
            |state, v| {
                if qmaps.background_mask[v] {
                    return None;
                }
                let mut out = vec![ZERO; rows];
                program.run_voxel(&qmaps.voxel(v), state, &mut out);
                Some(out)
            },
        )
        .collect();
    let mut signals = vec![ZERO; rows * n];
    for (v, s) in per_voxel.iter().enumerate() {
        if let Some(s) = s {
            for (r, val) in s.iter().enumerate() {
                signals[r * n + v] = *val;
            }
        }
    }
    signals
}

/// Inverse of T2* per voxel, zero on background.
pub(crate) fn r2_star(qmaps: &QuantitativeMaps) -> Vec<f64> {
    (0..qmaps.len())
        .map(|v| {
            if qmaps.background_mask[v] {
                0.0
            } else {
                1.0 / qmaps.qt2[v] + 1.0 / qmaps.qt2_prime[v]
            }
        })
        .collect()
}

/// Encodes row amplitudes into k-space, one vector per contrast.
pub(crate) fn encode(
    program: &Program,
    signals: &[Complex64],
    qmaps: &QuantitativeMaps,
    mode: SimMode,
) -> Vec<Vec<Complex64>> {
    let (nx, ny) = (program.nx, program.ny);
    let n = nx * ny;
    let scale = 1.0 / (n as f64).sqrt();
    let r2s = match mode {
        SimMode::Idealized => Vec::new(),
        SimMode::IntraReadoutDecay => r2_star(qmaps),
    };
    program
        .segments
        .par_iter()
        .map(|segments| {
            let mut k = vec![ZERO; n];
            let mut a = vec![ZERO; nx];
            for seg in segments {
                let sig = &signals[seg.row * n..(seg.row + 1) * n];
                let ey = &program.ey[seg.line * ny..(seg.line + 1) * ny];
                match mode {
                    SimMode::Idealized => {
                        a.fill(ZERO);
                        for y in 0..ny {
                            for x in 0..nx {
                                a[x] += sig[y * nx + x] * ey[y];
                            }
                        }
                        for &(s, _) in &seg.samples {
                            let ex = &program.ex[s * nx..(s + 1) * nx];
                            let acc: Complex64 = a.iter().zip(ex).map(|(a, e)| a * e).sum();
                            k[seg.line * nx + s] += acc * scale;
                        }
                    }
                    SimMode::IntraReadoutDecay => {
                        for &(s, dt) in &seg.samples {
                            let ex = &program.ex[s * nx..(s + 1) * nx];
                            let mut acc = ZERO;
                            for y in 0..ny {
                                let mut row = ZERO;
                                for x in 0..nx {
                                    let v = y * nx + x;
                                    if sig[v] != ZERO {
                                        row += sig[v] * (-dt * r2s[v]).exp() * ex[x];
                                    }
                                }
                                acc += row * ey[y];
                            }
                            k[seg.line * nx + s] += acc * scale;
                        }
                    }
                }
            }
            k
        })
        .collect()
}

fn check_congruent(qmaps: &QuantitativeMaps, nx: usize, ny: usize) -> Result<()> {
    if (qmaps.width, qmaps.height) != (nx, ny) {
        return Err(Error::Dimension(format!(
            "maps are {}x{} but the sequence matrix is {nx}x{ny}",
            qmaps.width, qmaps.height
        )));
    }
    qmaps.check()
}

/// Runs a compiled program on every voxel and returns k-space per contrast.
pub fn simulate_program(program: &Program, qmaps: &QuantitativeMaps, mode: SimMode) -> Result<KSpace> {
    check_congruent(qmaps, program.nx, program.ny)?;
    let signals = voxel_signals(program, qmaps);
    let data = encode(program, &signals, qmaps, mode);
    if data.iter().flatten().any(|c| !c.is_finite()) {
        return Err(Error::NonFinite(format!("k-space of '{}'", program.name)));
    }
    Ok(KSpace { nx: program.nx, ny: program.ny, data })
}

pub fn simulate(qmaps: &QuantitativeMaps, seq: &Sequence, options: &SimOptions) -> Result<KSpace> {
    simulate_program(&Program::compile(seq, options)?, qmaps, options.mode)
}

/// Complex echo amplitude per voxel of every contrast, read on the centre
/// k-space line. For sequences whose lines all see the same state this is
/// exactly the image that [`reconstruct_complex`] returns.
pub fn echo_amplitudes(
    qmaps: &QuantitativeMaps,
    seq: &Sequence,
    options: &SimOptions,
) -> Result<Vec<Vec<Complex64>>> {
    let program = Program::compile(seq, options)?;
    check_congruent(qmaps, program.nx, program.ny)?;
    let signals = voxel_signals(&program, qmaps);
    let n = qmaps.len();
    let centre = program.ny / 2;
    program
        .segments
        .iter()
        .enumerate()
        .map(|(c, segs)| {
            let seg = segs.iter().find(|s| s.line == centre).ok_or_else(|| {
                Error::InvalidArgument(format!("contrast {c} never samples line {centre}"))
            })?;
            Ok(signals[seg.row * n..(seg.row + 1) * n].to_vec())
        })
        .collect()
}

/// Complex image of one contrast from centred k-space.
pub fn reconstruct_complex(k: &[Complex64], nx: usize, ny: usize) -> Result<Vec<Complex64>> {
    let mut img = ifft2(k, nx, ny)?;
    checker(&mut img, nx);
    Ok(img)
}

/// Centred k-space of a complex image; inverse of [`reconstruct_complex`].
pub fn image_to_kspace(img: &[Complex64], nx: usize, ny: usize) -> Result<Vec<Complex64>> {
    let mut x = img.to_vec();
    checker(&mut x, nx);
    fft2(&x, nx, ny)
}

/// Magnitude of the unitary inverse FFT of each contrast.
pub fn reconstruct(k: &KSpace) -> Result<Image> {
    let data = k
        .data
        .iter()
        .map(|c| Ok(reconstruct_complex(c, k.nx, k.ny)?.iter().map(|z| z.norm()).collect()))
        .collect::<Result<_>>()?;
    Ok(Image { nx: k.nx, ny: k.ny, data })
}

#[derive(Clone, Debug, PartialEq)]
pub struct Contrast {
    pub sequence: String,
    pub echo: usize,
    pub kspace: Vec<Complex64>,
    pub image: Vec<f64>,
}

/// All contrasts of a protocol in (sequence, echo) order.
#[derive(Clone, Debug, PartialEq)]
pub struct ContrastStack {
    pub nx: usize,
    pub ny: usize,
    pub contrasts: Vec<Contrast>,
}

impl ContrastStack {
    pub fn len(&self) -> usize {
        self.contrasts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.contrasts.is_empty()
    }

    /// Errors unless `other` has the same dims and contrast labels.
    pub fn check_congruent(&self, other: &ContrastStack) -> Result<()> {
        if (self.nx, self.ny) != (other.nx, other.ny) {
            return Err(Error::Dimension(format!(
                "stack dims {}x{} vs {}x{}",
                self.nx, self.ny, other.nx, other.ny
            )));
        }
        if self.len() != other.len() {
            return Err(Error::Dimension(format!(
                "stacks hold {} vs {} contrasts",
                self.len(),
                other.len()
            )));
        }
        for (i, (a, b)) in self.contrasts.iter().zip(&other.contrasts).enumerate() {
            if a.sequence != b.sequence || a.echo != b.echo {
                return Err(Error::Dimension(format!(
                    "contrast {i} is {}#{} vs {}#{}",
                    a.sequence, a.echo, b.sequence, b.echo
                )));
            }
        }
        Ok(())
    }
}

/// Simulates and reconstructs compiled programs on already-mixed maps.
pub fn simulate_programs(
    programs: &[Program],
    qmaps: &QuantitativeMaps,
    mode: SimMode,
) -> Result<ContrastStack> {
    if programs.is_empty() {
        return Err(Error::InvalidArgument("empty sequence list".into()));
    }
    let mut contrasts = Vec::new();
    for p in programs {
        let k = simulate_program(p, qmaps, mode)?;
        for (echo, kspace) in k.data.into_iter().enumerate() {
            let image = reconstruct_complex(&kspace, k.nx, k.ny)?
                .iter()
                .map(|z| z.norm())
                .collect();
            contrasts.push(Contrast {
                sequence: p.name.clone(),
                echo,
                kspace,
                image,
            });
        }
    }
    Ok(ContrastStack {
        nx: qmaps.width,
        ny: qmaps.height,
        contrasts,
    })
}

pub fn compile_all(sequences: &[Sequence], options: &SimOptions) -> Result<Vec<Program>> {
    sequences.iter().map(|s| Program::compile(s, options)).collect()
}

/// Mixes, simulates and reconstructs every echo of every sequence.
pub fn simulate_stack(
    maps: &ProbabilityMaps,
    table: &TissueTable,
    sequences: &[Sequence],
    options: &SimOptions,
) -> Result<ContrastStack> {
    table.validate()?;
    let qmaps = mix(maps, table)?;
    simulate_programs(&compile_all(sequences, options)?, &qmaps, options.mode)
}
