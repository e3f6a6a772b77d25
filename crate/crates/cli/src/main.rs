//! `bmapest` batch driver.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{error::ErrorKind, CommandFactory, Parser, Subcommand, ValueEnum};

use bmapest::config::RunConfig;
use bmapest::grad::{phantom_gradcheck, GateConfig, GradcheckOptions};
use bmapest::metrics::{evaluate, write_metrics_csv};
use bmapest::optimize::{
    estimate, run_ablation, AblationInputs, AblationKind, Domain, OptimConfig, Optimizer, Parameterization, Subject,
};
use bmapest::phantom::{export_csv, import_csv, import_raw, load_maps, save_maps, synth_phantom};
use bmapest::sequence::{preset_with, write_sequence, PresetKind, Sequence};
use bmapest::simulator::{load_stack, save_stack, simulate_stack, SimMode};
use bmapest::{Error, Result};

const GATE: f64 = 1e-5;

#[derive(Parser, Debug)]
#[command(name = "bmapest", version, about = "Estimate CSF/GM/WM probability maps from simulated MRI contrasts")]
struct Cli {
    /// Worker threads; results do not depend on this.
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate or convert a probability-map phantom.
    Phantom(PhantomArgs),
    /// Simulate k-space and images for a phantom.
    Simulate(SimulateArgs),
    /// Recover probability maps from an observed contrast stack.
    Estimate(EstimateArgs),
    /// Compare estimated maps with ground truth.
    Metrics(MetricsArgs),
    /// Run an ablation over synthetic subjects.
    Ablate(AblateArgs),
    /// Check backward gradients against finite differences.
    Gradcheck(GradcheckArgs),
}

#[derive(clap::Args, Debug)]
struct PhantomArgs {
    /// Generate a synthetic phantom.
    #[arg(long, conflicts_with_all = ["from_csv", "from_raw"])]
    synth: bool,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value_t = 16)]
    size: usize,
    /// Convert from CSV (`x,y,csf,gm,wm`).
    #[arg(long, conflicts_with = "from_raw")]
    from_csv: Option<PathBuf>,
    /// Convert 8-bit slices described by a JSON sidecar.
    #[arg(long)]
    from_raw: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Also write the maps as CSV.
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(clap::Args, Debug)]
struct SimulateArgs {
    #[arg(long)]
    maps: PathBuf,
    /// Comma list of presets, or `all`.
    #[arg(long, default_value = "all")]
    seq: String,
    /// Config file with tissue table, timing and simulation keys.
    #[arg(long, alias = "config")]
    table: Option<PathBuf>,
    #[arg(long, value_enum)]
    mode: Option<ModeArg>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(clap::Args, Debug)]
struct EstimateArgs {
    /// Directory written by `simulate`.
    #[arg(long)]
    obs: PathBuf,
    #[arg(long, default_value = "all")]
    seq: String,
    #[arg(long, value_enum, default_value_t = ParamArg::Direct)]
    param: ParamArg,
    /// Basis subjects for `--param atlas`, comma separated.
    #[arg(long, value_delimiter = ',')]
    basis: Vec<PathBuf>,
    /// Reference maps for `--param scalar`.
    #[arg(long)]
    reference: Option<PathBuf>,
    #[arg(long, value_enum)]
    loss: Option<DomainArg>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long, value_enum)]
    optimizer: Option<OptimizerArg>,
    /// Maps to optimize, e.g. `csf`; the rest come from `--fixed`.
    #[arg(long)]
    free: Option<String>,
    #[arg(long)]
    fixed: Option<PathBuf>,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_enum)]
    mode: Option<ModeArg>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    history: Option<PathBuf>,
}

#[derive(clap::Args, Debug)]
struct MetricsArgs {
    #[arg(long)]
    pred: PathBuf,
    #[arg(long)]
    gt: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(clap::Args, Debug)]
struct AblateArgs {
    #[arg(long, value_enum)]
    kind: KindArg,
    /// Number of synthetic subjects, seeded from `--seed`.
    #[arg(long, default_value_t = 3)]
    subjects: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value_t = 16)]
    size: usize,
    /// Use these phantoms instead of synthetic subjects.
    #[arg(long, value_delimiter = ',')]
    maps: Vec<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(clap::Args, Debug)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 8)]
    size: usize,
    #[arg(long, default_value = "t1ir")]
    preset: String,
    #[arg(long, default_value_t = 2)]
    echoes: usize,
    /// Loss domain; `both` runs image and k-space.
    #[arg(long, value_enum, default_value_t = GateDomain::Both)]
    domain: GateDomain,
    #[arg(long, value_enum, default_value_t = ModeArg::Idealized)]
    mode: ModeArg,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value_t = 32)]
    samples: usize,
    #[arg(long, default_value_t = 1e-4)]
    eps: f64,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ModeArg {
    Idealized,
    IntraReadoutDecay,
}

impl From<ModeArg> for SimMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Idealized => SimMode::Idealized,
            ModeArg::IntraReadoutDecay => SimMode::IntraReadoutDecay,
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ParamArg {
    Direct,
    Atlas,
    Scalar,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum DomainArg {
    Image,
    Kspace,
}

impl From<DomainArg> for Domain {
    fn from(d: DomainArg) -> Self {
        match d {
            DomainArg::Image => Domain::Image,
            DomainArg::Kspace => Domain::KSpace,
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum GateDomain {
    Image,
    Kspace,
    Both,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum OptimizerArg {
    Adam,
    Sgd,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
#[value(rename_all = "snake_case")]
enum KindArg {
    ContrastSweep,
    ParamSweep,
    SingleMap,
    LossDomain,
}

impl From<KindArg> for AblationKind {
    fn from(k: KindArg) -> Self {
        match k {
            KindArg::ContrastSweep => AblationKind::ContrastSweep,
            KindArg::ParamSweep => AblationKind::ParamSweep,
            KindArg::SingleMap => AblationKind::SingleMap,
            KindArg::LossDomain => AblationKind::LossDomain,
        }
    }
}

/// Outcome of a command that ran to completion.
enum Outcome {
    Done,
    GateFailed,
}

fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}

fn require_file(path: &Path) -> Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(invalid(format!("input file {} does not exist", path.display())))
    }
}

fn require_dir(path: &Path) -> Result<()> {
    if path.is_dir() {
        Ok(())
    } else {
        Err(invalid(format!("input directory {} does not exist", path.display())))
    }
}

/// The parent directory of an output file must already exist.
fn require_parent(path: &Path) -> Result<()> {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() && !p.is_dir() => {
            Err(invalid(format!("output directory {} does not exist", p.display())))
        }
        _ => Ok(()),
    }
}

fn load_config(path: Option<&Path>) -> Result<RunConfig> {
    match path {
        Some(p) => {
            require_file(p)?;
            RunConfig::load(p)
        }
        None => Ok(RunConfig::default()),
    }
}

fn parse_presets(list: &str) -> Result<Vec<PresetKind>> {
    if list.trim() == "all" {
        return Ok(PresetKind::ALL.to_vec());
    }
    list.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(PresetKind::parse)
        .collect::<Result<Vec<_>>>()
        .and_then(|v| if v.is_empty() { Err(invalid("no sequences given")) } else { Ok(v) })
}

fn build_sequences(kinds: &[PresetKind], matrix: (usize, usize), cfg: &RunConfig) -> Result<Vec<Sequence>> {
    kinds.iter().map(|k| preset_with(*k, matrix, &cfg.table, &cfg.timing)).collect()
}

fn phantom(a: PhantomArgs) -> Result<Outcome> {
    let sources = usize::from(a.synth) + usize::from(a.from_csv.is_some()) + usize::from(a.from_raw.is_some());
    if sources != 1 {
        return Err(invalid("give exactly one of --synth, --from-csv, --from-raw"));
    }
    for p in [&a.from_csv, &a.from_raw].into_iter().flatten() {
        require_file(p)?;
    }
    require_parent(&a.out)?;
    if let Some(c) = &a.csv {
        require_parent(c)?;
    }
    let maps = if a.synth {
        synth_phantom(a.seed, a.size)?
    } else if let Some(p) = &a.from_csv {
        import_csv(p)?
    } else {
        import_raw(a.from_raw.as_ref().expect("one source"))?
    };
    save_maps(&maps, &a.out)?;
    if let Some(c) = &a.csv {
        export_csv(&maps, c)?;
    }
    let over = maps.max_sum();
    if over > 1.0 + 1e-6 {
        eprintln!("note: channel sums reach {over:.4} (> 1)");
    }
    println!("wrote {}x{} phantom to {}", maps.width, maps.height, a.out.display());
    Ok(Outcome::Done)
}

fn simulate(a: SimulateArgs) -> Result<Outcome> {
    require_file(&a.maps)?;
    require_parent(&a.out)?;
    let mut cfg = load_config(a.table.as_deref())?;
    if let Some(m) = a.mode {
        cfg.sim.mode = m.into();
    }
    let kinds = parse_presets(&a.seq)?;
    let maps = load_maps(&a.maps)?;
    let sequences = build_sequences(&kinds, (maps.width, maps.height), &cfg)?;
    let stack = simulate_stack(&maps, &cfg.table, &sequences, &cfg.sim)?;
    save_stack(&stack, &a.out)?;
    for s in &sequences {
        let path = a.out.join(format!("{}.seq", s.name));
        std::fs::write(&path, write_sequence(s)).map_err(|e| invalid(format!("{}: {e}", path.display())))?;
    }
    println!("wrote {} contrasts to {}", stack.len(), a.out.display());
    Ok(Outcome::Done)
}

fn estimate_cmd(a: EstimateArgs) -> Result<Outcome> {
    require_dir(&a.obs)?;
    for p in a.basis.iter().chain(&a.reference).chain(&a.fixed) {
        require_file(p)?;
    }
    require_parent(&a.out)?;
    if let Some(h) = &a.history {
        require_parent(h)?;
    }
    let mut cfg = load_config(a.config.as_deref())?;
    if let Some(d) = a.loss {
        cfg.loss.domain = d.into();
    }
    if let Some(e) = a.epochs {
        cfg.optim.epochs = e;
    }
    if let Some(lr) = a.lr {
        cfg.optim.lr = lr;
    }
    if let Some(o) = a.optimizer {
        cfg.optim.optimizer = match o {
            OptimizerArg::Adam => Optimizer::Adam,
            OptimizerArg::Sgd => Optimizer::Sgd,
        };
    }
    if let Some(f) = &a.free {
        cfg.optim.free_maps = OptimConfig::parse_free_maps(f)?;
    }
    if let Some(m) = a.mode {
        cfg.sim.mode = m.into();
    }
    if let Some(f) = &a.fixed {
        cfg.optim.fixed = Some(load_maps(f)?);
    }
    cfg.optim.validate()?;
    let param = match a.param {
        ParamArg::Direct => Parameterization::DirectPixel,
        ParamArg::Atlas => {
            if a.basis.is_empty() {
                return Err(invalid("--param atlas needs --basis"));
            }
            let basis = a.basis.iter().map(load_maps).collect::<Result<Vec<_>>>()?;
            Parameterization::LinearAtlas { basis }
        }
        ParamArg::Scalar => {
            let r = a.reference.as_ref().ok_or_else(|| invalid("--param scalar needs --reference"))?;
            Parameterization::ScalarPerMap { reference: load_maps(r)? }
        }
    };
    let kinds = parse_presets(&a.seq)?;
    let observed = load_stack(&a.obs)?;
    let sequences = build_sequences(&kinds, (observed.nx, observed.ny), &cfg)?;
    let est = estimate(&observed, &sequences, &cfg.table, &param, &cfg.loss, &cfg.optim, &cfg.sim)?;
    save_maps(&est.maps, &a.out)?;
    if let Some(h) = &a.history {
        est.write_history(h)?;
    }
    match (est.history.first(), est.history.last()) {
        (Some(first), Some(last)) => println!(
            "{} epochs, loss {first:e} -> {last:e}; wrote {}",
            est.history.len(),
            a.out.display()
        ),
        _ => println!("0 epochs; wrote initialization to {}", a.out.display()),
    }
    Ok(Outcome::Done)
}

fn metrics_cmd(a: MetricsArgs) -> Result<Outcome> {
    require_file(&a.pred)?;
    require_file(&a.gt)?;
    if let Some(o) = &a.out {
        require_parent(o)?;
    }
    let rows = evaluate(&load_maps(&a.pred)?, &load_maps(&a.gt)?)?;
    println!("tissue,dice,psnr,ssim");
    for r in &rows {
        println!("{},{:.4},{:.2},{:.4}", r.tissue.name(), r.dice, r.psnr, r.ssim);
    }
    if let Some(o) = &a.out {
        write_metrics_csv(&rows, o)?;
    }
    Ok(Outcome::Done)
}

fn ablate(a: AblateArgs) -> Result<Outcome> {
    for p in &a.maps {
        require_file(p)?;
    }
    if let Some(o) = &a.out {
        require_parent(o)?;
    }
    let mut cfg = load_config(a.config.as_deref())?;
    if let Some(e) = a.epochs {
        cfg.optim.epochs = e;
    }
    if let Some(lr) = a.lr {
        cfg.optim.lr = lr;
    }
    let subjects = if a.maps.is_empty() {
        (0..a.subjects as u64)
            .map(|i| {
                let seed = a.seed + i;
                Ok(Subject { name: format!("synth_{seed}"), maps: synth_phantom(seed, a.size)? })
            })
            .collect::<Result<Vec<_>>>()?
    } else {
        a.maps
            .iter()
            .map(|p| Ok(Subject { name: p.display().to_string(), maps: load_maps(p)? }))
            .collect::<Result<Vec<_>>>()?
    };
    let inputs = AblationInputs {
        subjects,
        table: cfg.table,
        timing: cfg.timing,
        sim: cfg.sim,
        config: cfg.optim,
    };
    let table = run_ablation(a.kind.into(), &inputs)?;
    print!("{}", table.to_csv());
    if let Some(o) = &a.out {
        table.write_csv(o)?;
    }
    Ok(Outcome::Done)
}

fn gradcheck_cmd(a: GradcheckArgs) -> Result<Outcome> {
    let domains = match a.domain {
        GateDomain::Image => vec![Domain::Image],
        GateDomain::Kspace => vec![Domain::KSpace],
        GateDomain::Both => vec![Domain::Image, Domain::KSpace],
    };
    let preset = PresetKind::parse(&a.preset)?;
    let mut worst = 0.0f64;
    for domain in domains {
        let cfg = GateConfig {
            size: a.size,
            preset,
            echoes: a.echoes,
            domain,
            mode: a.mode.into(),
            seed: a.seed,
            check: GradcheckOptions { eps: a.eps, samples: a.samples, seed: a.seed },
        };
        let report = phantom_gradcheck(&cfg)?;
        println!("{} loss, {}:", domain.name(), preset.name());
        println!("{report}");
        worst = worst.max(report.max_rel_err);
    }
    let pass = worst <= GATE;
    println!("max rel err {worst:.3e} ({})", if pass { "pass" } else { "FAIL" });
    Ok(if pass { Outcome::Done } else { Outcome::GateFailed })
}

fn run(command: Command) -> Result<Outcome> {
    match command {
        Command::Phantom(a) => phantom(a),
        Command::Simulate(a) => simulate(a),
        Command::Estimate(a) => estimate_cmd(a),
        Command::Metrics(a) => metrics_cmd(a),
        Command::Ablate(a) => ablate(a),
        Command::Gradcheck(a) => gradcheck_cmd(a),
    }
}

/// Flags accepted by the subcommand named in `argv`, for error messages.
fn valid_flags(argv: &[String]) -> Option<String> {
    let cmd = Cli::command();
    let sub = argv.iter().skip(1).find_map(|a| cmd.find_subcommand(a))?;
    let flags: Vec<String> = sub
        .get_arguments()
        .chain(cmd.get_arguments())
        .filter_map(|a| a.get_long().map(|l| format!("--{l}")))
        .collect();
    Some(flags.join(", "))
}

fn main() -> ExitCode {
    let argv: Vec<String> = std::env::args().collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                kind => {
                    if kind == ErrorKind::UnknownArgument {
                        if let Some(flags) = valid_flags(&argv) {
                            eprintln!("valid flags: {flags}");
                        }
                    }
                    ExitCode::from(1)
                }
            };
        }
    };
    if cli.threads == Some(0) {
        eprintln!("error: --threads must be at least 1");
        return ExitCode::from(1);
    }
    let pool = match rayon::ThreadPoolBuilder::new().num_threads(cli.threads.unwrap_or(0)).build() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: cannot start thread pool: {e}");
            return ExitCode::from(1);
        }
    };
    match pool.install(|| run(cli.command)) {
        Ok(Outcome::Done) => ExitCode::SUCCESS,
        Ok(Outcome::GateFailed) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_numerical() { 2 } else { 1 })
        }
    }
}
