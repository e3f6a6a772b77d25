//! Experiment grid: each kind runs a handful of estimation configurations
//! over every subject and summarizes the metrics per tissue.

use std::fmt::Write as _;
use std::path::Path;

use super::{estimate_problem, Domain, LossSpec, OptimConfig, Parameterization};
use crate::error::{Error, Result};
use crate::grad::Problem;
use crate::metrics::{aggregate, evaluate, TissueSummary};
use crate::phantom::{ProbabilityMaps, TissueTable};
use crate::sequence::{preset_with, PresetKind, Sequence, Timing};
use crate::simulator::{simulate_stack, SimOptions};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AblationKind {
    /// One t1ir echo, four t1ir echoes, all 24 contrasts.
    ContrastSweep,
    /// Direct pixels, per-pixel atlas coefficients, one scale per map.
    ParamSweep,
    /// All maps free, then each map alone with the others at ground truth.
    SingleMap,
    /// Image-domain versus k-space loss.
    LossDomain,
}

impl AblationKind {
    pub const ALL: [AblationKind; 4] = [
        AblationKind::ContrastSweep,
        AblationKind::ParamSweep,
        AblationKind::SingleMap,
        AblationKind::LossDomain,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AblationKind::ContrastSweep => "contrast_sweep",
            AblationKind::ParamSweep => "param_sweep",
            AblationKind::SingleMap => "single_map",
            AblationKind::LossDomain => "loss_domain",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL.into_iter().find(|k| k.name() == s).ok_or_else(|| {
            Error::InvalidArgument(format!(
                "unknown ablation '{s}' (valid: {})",
                Self::ALL.map(|k| k.name()).join(", ")
            ))
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Subject {
    pub name: String,
    pub maps: ProbabilityMaps,
}

#[derive(Clone, Debug)]
pub struct AblationInputs {
    pub subjects: Vec<Subject>,
    pub table: TissueTable,
    pub timing: Timing,
    pub sim: SimOptions,
    pub config: OptimConfig,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblationRow {
    pub configuration: String,
    pub tissues: Vec<TissueSummary>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblationTable {
    pub kind: AblationKind,
    pub rows: Vec<AblationRow>,
}

impl AblationTable {
    /// One row per configuration; columns are tissue × {dice, psnr, ssim}
    /// as `mean±std`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("configuration");
        for t in ["csf", "gm", "wm"] {
            for m in ["dice", "psnr", "ssim"] {
                write!(s, ",{t}_{m}").unwrap();
            }
        }
        s.push('\n');
        for r in &self.rows {
            s.push_str(&r.configuration);
            for t in &r.tissues {
                write!(s, ",{},{},{}", t.dice, t.psnr, t.ssim).unwrap();
            }
            s.push('\n');
        }
        s
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}

struct Setup {
    label: String,
    sequences: Vec<Sequence>,
    loss: Domain,
    free_maps: [bool; 3],
    param: ParamChoice,
}

#[derive(Clone, Copy)]
enum ParamChoice {
    Direct,
    Atlas,
    Scalar,
}

fn sequences(kinds: &[PresetKind], echoes: usize, matrix: (usize, usize), inputs: &AblationInputs) -> Result<Vec<Sequence>> {
    let mut timing = inputs.timing.clone();
    timing.echo_times.truncate(echoes);
    timing.t2prep_taus.truncate(echoes);
    kinds
        .iter()
        .map(|k| preset_with(*k, matrix, &inputs.table, &timing))
        .collect()
}

pub fn run_ablation(kind: AblationKind, inputs: &AblationInputs) -> Result<AblationTable> {
    let first = inputs
        .subjects
        .first()
        .ok_or_else(|| Error::InvalidArgument("ablation needs at least one subject".into()))?;
    let matrix = (first.maps.width, first.maps.height);
    if inputs.subjects.iter().any(|s| (s.maps.width, s.maps.height) != matrix) {
        return Err(Error::Dimension("subjects differ in size".into()));
    }
    let all = sequences(&PresetKind::ALL, inputs.timing.echo_times.len(), matrix, inputs)?;
    let setup = |label: &str, sequences: Vec<Sequence>| Setup {
        label: label.to_string(),
        sequences,
        loss: Domain::Image,
        free_maps: [true; 3],
        param: ParamChoice::Direct,
    };
    let setups = match kind {
        AblationKind::ContrastSweep => vec![
            setup("t1ir_1", sequences(&[PresetKind::T1Ir], 1, matrix, inputs)?),
            setup("t1ir_4", sequences(&[PresetKind::T1Ir], inputs.timing.echo_times.len(), matrix, inputs)?),
            setup("all_24", all),
        ],
        AblationKind::ParamSweep => {
            if inputs.subjects.len() < 2 {
                return Err(Error::InvalidArgument(
                    "param_sweep needs at least two subjects for the leave-one-out basis".into(),
                ));
            }
            vec![
                Setup { param: ParamChoice::Direct, ..setup("direct", all.clone()) },
                Setup { param: ParamChoice::Atlas, ..setup("linear_atlas", all.clone()) },
                Setup { param: ParamChoice::Scalar, ..setup("scalar", all) },
            ]
        }
        AblationKind::SingleMap => vec![
            setup("all_three", all.clone()),
            Setup { free_maps: [true, false, false], ..setup("csf_only", all.clone()) },
            Setup { free_maps: [false, true, false], ..setup("gm_only", all.clone()) },
            Setup { free_maps: [false, false, true], ..setup("wm_only", all) },
        ],
        AblationKind::LossDomain => vec![
            setup("image", all.clone()),
            Setup { loss: Domain::KSpace, ..setup("kspace", all) },
        ],
    };

    let mut rows = Vec::new();
    for s in &setups {
        let mut per_subject = Vec::new();
        for (i, subj) in inputs.subjects.iter().enumerate() {
            let others: Vec<ProbabilityMaps> = inputs
                .subjects
                .iter()
                .enumerate()
                .filter(|(j, _)| *j != i)
                .map(|(_, o)| o.maps.clone())
                .collect();
            let param = match s.param {
                ParamChoice::Direct => Parameterization::DirectPixel,
                ParamChoice::Atlas => Parameterization::LinearAtlas { basis: others },
                ParamChoice::Scalar => Parameterization::ScalarPerMap { reference: Parameterization::mean_map(&others)? },
            };
            let observed = simulate_stack(&subj.maps, &inputs.table, &s.sequences, &inputs.sim)?;
            let problem = Problem::new(inputs.table, &s.sequences, &inputs.sim, LossSpec::new(s.loss), observed)?;
            let config = OptimConfig {
                free_maps: s.free_maps,
                fixed: Some(subj.maps.clone()),
                ..inputs.config.clone()
            };
            let est = estimate_problem(&problem, &param, &config)?;
            per_subject.push(evaluate(&est.maps, &subj.maps)?);
        }
        rows.push(AblationRow { configuration: s.label.clone(), tissues: aggregate(&per_subject)? });
    }
    Ok(AblationTable { kind, rows })
}
