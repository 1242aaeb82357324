//! `porogen` command line: synth, stats, train, reconstruct, anneal, eval and
//! plot subcommands over the library pipeline.
//!
//! Exit codes: 1 for usage problems, 2 for I/O failures, 3 for numerical
//! aborts. All randomness enters through `--seed`; reruns with identical
//! arguments produce byte-identical output files. A JSON config file passed
//! via `--config` overrides the corresponding flags.

use std::fmt;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Deserialize;

use porogen::anneal::{anneal_reconstruct, target_stats_from_image, AnnealConfig, AnnealError};
use porogen::grid::{load_image, make_conditional_input, save_image, GridError, Mask};
use porogen::models::{load_models, ModelError, NetConfig};
use porogen::morph::{
    lineal_path, save_curves_csv, two_point_cluster, two_point_correlation, Direction, MorphError,
    Phase,
};
use porogen::objective::LossWeights;
use porogen::report::{evaluate, plot_svg, EvalConfig, EvalReport, ReportError};
use porogen::synthdata::{
    build_dataset, load_manifest, load_samples, MaskSpec, MediumKind, MediumSpec, SynthError,
};
use porogen::train::{train, TrainConfig, TrainError};

enum CliError {
    Usage(String),
    Io(String),
    Numeric(String),
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Io(m) => write!(f, "i/o error: {m}"),
            CliError::Numeric(m) => write!(f, "numerical abort: {m}"),
        }
    }
}

impl From<GridError> for CliError {
    fn from(e: GridError) -> Self {
        match e {
            GridError::DimensionMismatch(_) | GridError::EmptyMask | GridError::ZeroArea => {
                CliError::Usage(e.to_string())
            }
            _ => CliError::Io(e.to_string()),
        }
    }
}

impl From<SynthError> for CliError {
    fn from(e: SynthError) -> Self {
        match e {
            SynthError::Io { .. } | SynthError::Manifest(_) => CliError::Io(e.to_string()),
            SynthError::Grid(g) => g.into(),
            _ => CliError::Usage(e.to_string()),
        }
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::NonFinite { .. } => CliError::Numeric(e.to_string()),
            TrainError::Model(m) => m.into(),
            _ => CliError::Usage(e.to_string()),
        }
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::InvalidConfig(_) => CliError::Usage(e.to_string()),
            _ => CliError::Io(e.to_string()),
        }
    }
}

impl From<MorphError> for CliError {
    fn from(e: MorphError) -> Self {
        CliError::Usage(e.to_string())
    }
}

impl From<AnnealError> for CliError {
    fn from(e: AnnealError) -> Self {
        CliError::Usage(e.to_string())
    }
}

impl From<ReportError> for CliError {
    fn from(e: ReportError) -> Self {
        match e {
            ReportError::Train(t) => t.into(),
            ReportError::Grid(g) => g.into(),
            ReportError::Morph(m) => m.into(),
            ReportError::BadConfig(m) => CliError::Usage(m),
        }
    }
}

fn io_err(path: &Path, e: std::io::Error) -> CliError {
    CliError::Io(format!("{}: {e}", path.display()))
}

#[derive(Parser)]
#[command(
    name = "porogen",
    about = "Reconstruct binary porous media from partially informed images",
    version
)]
struct Cli {
    /// JSON file whose entries override the matching flags.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset of (input, mask, target) PGM triples.
    Synth(SynthArgs),
    /// Compute descriptor curves (S2, L, C2) of one image as CSV.
    Stats(StatsArgs),
    /// Train the generator/discriminator pair on a dataset directory.
    Train(TrainArgs),
    /// Draw reconstructions from a checkpoint for one conditional input.
    Reconstruct(ReconstructArgs),
    /// Simulated-annealing baseline reconstruction.
    Anneal(AnnealArgs),
    /// Evaluate a checkpoint: porosity statistics, curves, fidelity, diversity.
    Eval(EvalArgs),
    /// Render an evaluation report as an SVG figure.
    Plot(PlotArgs),
}

#[derive(Args)]
struct SynthArgs {
    /// Output dataset directory.
    #[arg(long)]
    out: PathBuf,
    /// Number of samples.
    #[arg(long, default_value_t = 600)]
    n: usize,
    #[arg(long, default_value_t = 64)]
    size: usize,
    /// Medium kind: blob | disks | aniso.
    #[arg(long, default_value = "blob")]
    medium: String,
    /// Target porosity.
    #[arg(long, default_value_t = 0.3)]
    phi: f64,
    /// Correlation length in pixels.
    #[arg(long, default_value_t = 3.0)]
    corr_len: f64,
    /// Mask geometry: corner:S | squares:SxK | hstrip:H | vstrip:W.
    #[arg(long, default_value = "corner:13")]
    mask: String,
    /// Re-randomize square placement per sample instead of one fixed mask.
    #[arg(long, default_value_t = false)]
    mask_per_sample: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct StatsArgs {
    /// Input PGM image.
    #[arg(long)]
    input: PathBuf,
    /// Output CSV path.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 32)]
    r_max: usize,
    /// Direction: x | y | xy | se.
    #[arg(long, default_value = "xy")]
    direction: String,
    /// Phase: pore | solid.
    #[arg(long, default_value = "pore")]
    phase: String,
}

#[derive(Args)]
struct TrainArgs {
    /// Dataset directory produced by `synth`.
    #[arg(long)]
    data: PathBuf,
    /// Output directory for the checkpoint and loss log.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 10)]
    epochs: usize,
    #[arg(long, default_value_t = 2)]
    batch: usize,
    #[arg(long, default_value_t = 8)]
    nz: usize,
    #[arg(long, default_value_t = 16)]
    base_channels: usize,
    #[arg(long, default_value_t = 10.0)]
    lambda_l1: f64,
    #[arg(long, default_value_t = 5.0e5)]
    lambda_pattern: f64,
    #[arg(long, default_value_t = 1.0e3)]
    lambda_porosity: f64,
    /// Pattern template size N.
    #[arg(long, default_value_t = 3)]
    template: usize,
    #[arg(long, default_value_t = 2e-4)]
    lr: f64,
    /// Epoch at which the linear lr decay starts (default: halfway).
    #[arg(long)]
    decay_start: Option<usize>,
    /// Write an intermediate checkpoint every this many epochs.
    #[arg(long)]
    checkpoint_every: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct ReconstructArgs {
    /// Checkpoint written by `train`.
    #[arg(long)]
    checkpoint: PathBuf,
    /// Value-channel PGM (informed phases, 0 elsewhere).
    #[arg(long)]
    input: PathBuf,
    /// Mask PGM (255 = informed).
    #[arg(long)]
    mask: PathBuf,
    /// Number of realizations.
    #[arg(long, default_value_t = 3)]
    k: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory for recon_XX.pgm files.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct AnnealArgs {
    /// Value-channel PGM (informed phases, 0 elsewhere).
    #[arg(long)]
    input: PathBuf,
    /// Mask PGM (255 = informed).
    #[arg(long)]
    mask: PathBuf,
    /// Reference image supplying the target statistics.
    #[arg(long)]
    reference: PathBuf,
    /// Output directory for anneal.pgm and trace.csv.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 200)]
    sweeps: usize,
    #[arg(long, default_value_t = 1e-3)]
    t0: f64,
    #[arg(long, default_value_t = 0.95)]
    cooling: f64,
    #[arg(long, default_value_t = 3)]
    template: usize,
    /// Adds an S2 energy term with this weight.
    #[arg(long)]
    s2_weight: Option<f64>,
    #[arg(long, default_value_t = 16)]
    s2_r_max: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Dataset directory; evaluates a held-out test sample.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Index into the test split (with --data).
    #[arg(long, default_value_t = 0)]
    index: usize,
    /// Explicit conditional input instead of --data.
    #[arg(long)]
    input: Option<PathBuf>,
    #[arg(long)]
    mask: Option<PathBuf>,
    #[arg(long)]
    target: Option<PathBuf>,
    #[arg(long, default_value_t = 20)]
    realizations: usize,
    #[arg(long, default_value_t = 16)]
    r_max: usize,
    /// Direction: x | y | xy | se.
    #[arg(long, default_value = "xy")]
    direction: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory for report.json, curves and realizations.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct PlotArgs {
    /// report.json produced by `eval`.
    #[arg(long)]
    report: PathBuf,
    /// Output SVG path.
    #[arg(long)]
    out: PathBuf,
}

/// Optional JSON overrides; any present field replaces the flag value.
#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    size: Option<usize>,
    n: Option<usize>,
    medium: Option<String>,
    phi: Option<f64>,
    corr_len: Option<f64>,
    mask: Option<String>,
    seed: Option<u64>,
    epochs: Option<usize>,
    batch: Option<usize>,
    nz: Option<usize>,
    base_channels: Option<usize>,
    lambda_l1: Option<f64>,
    lambda_pattern: Option<f64>,
    lambda_porosity: Option<f64>,
    template: Option<usize>,
    lr: Option<f64>,
    realizations: Option<usize>,
    r_max: Option<usize>,
    direction: Option<String>,
    sweeps: Option<usize>,
    t0: Option<f64>,
    cooling: Option<f64>,
}

fn load_config(path: &Option<PathBuf>) -> Result<FileConfig, CliError> {
    match path {
        None => Ok(FileConfig::default()),
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| io_err(p, e))?;
            serde_json::from_str(&text)
                .map_err(|e| CliError::Usage(format!("bad config {}: {e}", p.display())))
        }
    }
}

macro_rules! override_from {
    ($cfg:expr, $args:expr, $($field:ident => $target:ident),+ $(,)?) => {
        $(if let Some(v) = $cfg.$field.clone() { $args.$target = v; })+
    };
}

fn parse_medium(kind: &str) -> Result<MediumKind, CliError> {
    match kind {
        "blob" => Ok(MediumKind::Blob),
        "disks" => Ok(MediumKind::Disks),
        "aniso" | "anisotropic" | "anisotropic-blob" => Ok(MediumKind::AnisotropicBlob),
        other => Err(CliError::Usage(format!(
            "unknown medium {other}; expected blob | disks | aniso"
        ))),
    }
}

fn parse_mask_spec(text: &str) -> Result<MaskSpec, CliError> {
    let bad = || {
        CliError::Usage(format!(
            "bad mask spec {text}; expected corner:S | squares:SxK | hstrip:H | vstrip:W"
        ))
    };
    let (kind, rest) = text.split_once(':').ok_or_else(bad)?;
    let num = |s: &str| s.parse::<usize>().map_err(|_| bad());
    match kind {
        "corner" => Ok(MaskSpec::CornerSquare { side: num(rest)? }),
        "squares" => {
            let (s, k) = rest.split_once('x').ok_or_else(bad)?;
            Ok(MaskSpec::RandomSquares { side: num(s)?, count: num(k)? })
        }
        "hstrip" => Ok(MaskSpec::HorizontalStrip { height: num(rest)? }),
        "vstrip" => Ok(MaskSpec::VerticalStrip { width: num(rest)? }),
        _ => Err(bad()),
    }
}

fn parse_direction(text: &str) -> Result<Direction, CliError> {
    match text {
        "x" | "X" => Ok(Direction::X),
        "y" | "Y" => Ok(Direction::Y),
        "xy" | "XY" => Ok(Direction::XYAveraged),
        "se" | "SE" => Ok(Direction::SeDiagonal),
        other => Err(CliError::Usage(format!(
            "unknown direction {other}; expected x | y | xy | se"
        ))),
    }
}

fn parse_phase(text: &str) -> Result<Phase, CliError> {
    match text {
        "pore" => Ok(Phase::Pore),
        "solid" => Ok(Phase::Solid),
        other => Err(CliError::Usage(format!("unknown phase {other}; expected pore | solid"))),
    }
}

fn load_cond(input: &Path, mask: &Path) -> Result<porogen::grid::ConditionalInput, CliError> {
    let values_img = load_image(input)?;
    let mask = Mask::load(mask)?;
    // build a pseudo-target from the value channel; unknown pixels read 0
    let cond = make_conditional_input(&values_img, &mask)?;
    Ok(cond)
}

fn run_synth(mut args: SynthArgs, cfg: FileConfig) -> Result<(), CliError> {
    override_from!(cfg, args,
        n => n, size => size, medium => medium, phi => phi, corr_len => corr_len,
        mask => mask, seed => seed);
    let medium = MediumSpec {
        kind: parse_medium(&args.medium)?,
        phi: args.phi,
        correlation_length: args.corr_len,
        seed: args.seed,
    };
    let mask = parse_mask_spec(&args.mask)?;
    let manifest = build_dataset(
        &args.out,
        args.n,
        args.size,
        &medium,
        &mask,
        args.mask_per_sample,
        args.seed,
    )?;
    println!(
        "dataset: {} samples ({} train / {} test) of {}px {} medium at phi {} in {}",
        manifest.sample_count,
        manifest.train.len(),
        manifest.test.len(),
        manifest.image_size,
        args.medium,
        args.phi,
        args.out.display()
    );
    Ok(())
}

fn run_stats(mut args: StatsArgs, cfg: FileConfig) -> Result<(), CliError> {
    override_from!(cfg, args, r_max => r_max, direction => direction);
    let img = load_image(&args.input)?;
    let direction = parse_direction(&args.direction)?;
    let phase = parse_phase(&args.phase)?;
    let curves = vec![
        two_point_correlation(&img, phase, direction, args.r_max)?,
        lineal_path(&img, phase, direction, args.r_max)?,
        two_point_cluster(&img, phase, direction, args.r_max)?,
    ];
    save_curves_csv(&curves, &args.out).map_err(|e| io_err(&args.out, e))?;
    println!(
        "wrote S2/L/C2 ({phase}, {direction}, r<={}) to {}",
        args.r_max,
        args.out.display()
    );
    Ok(())
}

fn run_train(mut args: TrainArgs, cfg: FileConfig) -> Result<(), CliError> {
    override_from!(cfg, args,
        epochs => epochs, batch => batch, nz => nz, base_channels => base_channels,
        lambda_l1 => lambda_l1, lambda_pattern => lambda_pattern,
        lambda_porosity => lambda_porosity, template => template, lr => lr, seed => seed);
    let manifest = load_manifest(&args.data)?;
    let samples = load_samples(&args.data, &manifest.train)?;
    let netcfg = NetConfig {
        base_channels: args.base_channels,
        n_z: args.nz,
        max_channels: args.base_channels * 8,
        ..NetConfig::new(manifest.image_size)
    };
    let traincfg = TrainConfig {
        epochs: args.epochs,
        batch_size: args.batch,
        weights: LossWeights {
            lambda_l1: args.lambda_l1,
            lambda_pattern: args.lambda_pattern,
            lambda_porosity: args.lambda_porosity,
        },
        template_n: args.template,
        seed: args.seed,
        checkpoint_every_epochs: args.checkpoint_every,
        base_lr: args.lr,
        decay_start_epoch: args.decay_start,
        non_saturating: false,
    };
    let out = train(&samples, &netcfg, &traincfg, Some(&args.out))?;
    let last = out.log.last();
    println!(
        "trained {} epochs on {} samples; checkpoint in {}",
        args.epochs,
        samples.len(),
        args.out.display()
    );
    if let Some(r) = last {
        println!(
            "final step {}: d_loss {:.4}, total {:.4}",
            r.step, r.report.d_loss, r.report.total
        );
    }
    Ok(())
}

fn run_reconstruct(mut args: ReconstructArgs, cfg: FileConfig) -> Result<(), CliError> {
    override_from!(cfg, args, seed => seed);
    let (gen, _disc, _meta) = load_models(&args.checkpoint)?;
    let cond = load_cond(&args.input, &args.mask)?;
    let images = porogen::train::reconstruct(&gen, &cond, args.k, args.seed)?;
    std::fs::create_dir_all(&args.out).map_err(|e| io_err(&args.out, e))?;
    for (i, img) in images.iter().enumerate() {
        let path = args.out.join(format!("recon_{i:02}.pgm"));
        save_image(img, &path)?;
        println!("wrote {}", path.display());
    }
    Ok(())
}

fn run_anneal(mut args: AnnealArgs, cfg: FileConfig) -> Result<(), CliError> {
    override_from!(cfg, args,
        sweeps => sweeps, t0 => t0, cooling => cooling, template => template, seed => seed);
    let cond = load_cond(&args.input, &args.mask)?;
    let reference = load_image(&args.reference)?;
    let stats = target_stats_from_image(
        &reference,
        args.template,
        args.s2_weight.map(|_| args.s2_r_max),
    )?;
    let anneal_cfg = AnnealConfig {
        initial_temperature: args.t0,
        cooling: args.cooling,
        sweeps: args.sweeps,
        weight_pattern: 1.0,
        weight_porosity: 1.0,
        weight_s2: args.s2_weight,
        s2_r_max: args.s2_r_max,
        template_n: args.template,
        seed: args.seed,
    };
    let result = anneal_reconstruct(&cond, &stats, &anneal_cfg)?;
    std::fs::create_dir_all(&args.out).map_err(|e| io_err(&args.out, e))?;
    let img_path = args.out.join("anneal.pgm");
    save_image(&result.image, &img_path)?;
    let trace_path = args.out.join("trace.csv");
    let mut buf = Vec::new();
    porogen::anneal::write_trace_csv(&result.trace, &mut buf)
        .map_err(|e| io_err(&trace_path, e))?;
    std::fs::write(&trace_path, buf).map_err(|e| io_err(&trace_path, e))?;
    let (first, last) = (
        result.trace.first().map(|r| r.total_energy).unwrap_or(0.0),
        result.trace.last().map(|r| r.total_energy).unwrap_or(0.0),
    );
    println!(
        "annealed {} sweeps: energy {first:.6} -> {last:.6}; wrote {} and {}",
        args.sweeps,
        img_path.display(),
        trace_path.display()
    );
    Ok(())
}

fn run_eval(mut args: EvalArgs, cfg: FileConfig) -> Result<(), CliError> {
    override_from!(cfg, args,
        realizations => realizations, r_max => r_max, direction => direction, seed => seed);
    if args.data.is_none() && (args.input.is_none() || args.mask.is_none() || args.target.is_none())
    {
        return Err(CliError::Usage(
            "eval needs either --data or all of --input/--mask/--target".into(),
        ));
    }
    let (gen, _disc, _meta) = load_models(&args.checkpoint)?;
    let (cond, target) = match (&args.data, &args.input, &args.mask, &args.target) {
        (Some(dir), _, _, _) => {
            let manifest = load_manifest(dir)?;
            let idx = *manifest.test.get(args.index).ok_or_else(|| {
                CliError::Usage(format!(
                    "test index {} out of range; the split has {} held-out samples",
                    args.index,
                    manifest.test.len()
                ))
            })?;
            let sample = load_samples(dir, &[idx])?.remove(0);
            (sample.cond, sample.target)
        }
        (None, Some(input), Some(mask), Some(target)) => {
            (load_cond(input, mask)?, load_image(target)?)
        }
        _ => {
            return Err(CliError::Usage(
                "eval needs either --data or all of --input/--mask/--target".into(),
            ))
        }
    };
    let eval_cfg = EvalConfig {
        realizations: args.realizations,
        seed: args.seed,
        r_max: args.r_max,
        direction: parse_direction(&args.direction)?,
    };
    let (report, timing) = evaluate(&gen, &cond, &target, &eval_cfg)?;

    std::fs::create_dir_all(&args.out).map_err(|e| io_err(&args.out, e))?;
    let report_path = args.out.join("report.json");
    std::fs::write(&report_path, report.to_json_string()).map_err(|e| io_err(&report_path, e))?;
    let target_csv = args.out.join("curves_target.csv");
    let mean_csv = args.out.join("curves_mean.csv");
    let targets: Vec<_> = report.curves.iter().map(|c| c.target_curve()).collect();
    let means: Vec<_> = report.curves.iter().map(|c| c.mean_curve()).collect();
    save_curves_csv(&targets, &target_csv).map_err(|e| io_err(&target_csv, e))?;
    save_curves_csv(&means, &mean_csv).map_err(|e| io_err(&mean_csv, e))?;
    let images = porogen::train::reconstruct(&gen, &cond, args.realizations, args.seed)?;
    for (i, img) in images.iter().enumerate() {
        let p = args.out.join(format!("realization_{i:02}.pgm"));
        save_image(img, &p)?;
    }

    println!(
        "porosity over {} realizations: {} (target {:.4})",
        report.realizations,
        report.porosity_summary(),
        report.target_porosity
    );
    println!("hard-data fidelity (pre-overwrite): {:.4}", report.hard_data_fidelity);
    println!("diversity (pairwise Hamming / unknown pixels): {:.4}", report.diversity);
    println!(
        "wall-clock: {:.4} s per reconstruction ({:.3} s total)",
        timing.seconds_per_reconstruction, timing.total_seconds
    );
    println!("report written to {}", report_path.display());
    Ok(())
}

fn run_plot(args: PlotArgs, _cfg: FileConfig) -> Result<(), CliError> {
    let text = std::fs::read_to_string(&args.report).map_err(|e| io_err(&args.report, e))?;
    let report: EvalReport = serde_json::from_str(&text)
        .map_err(|e| CliError::Usage(format!("bad report {}: {e}", args.report.display())))?;
    let svg = plot_svg(&report);
    std::fs::write(&args.out, svg).map_err(|e| io_err(&args.out, e))?;
    println!("wrote {}", args.out.display());
    Ok(())
}

fn run(cli: Cli) -> Result<(), CliError> {
    let cfg = load_config(&cli.config)?;
    match cli.command {
        Command::Synth(args) => run_synth(args, cfg),
        Command::Stats(args) => run_stats(args, cfg),
        Command::Train(args) => run_train(args, cfg),
        Command::Reconstruct(args) => run_reconstruct(args, cfg),
        Command::Anneal(args) => run_anneal(args, cfg),
        Command::Eval(args) => run_eval(args, cfg),
        Command::Plot(args) => run_plot(args, cfg),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            // clap renders its own message (help goes to stdout, errors to stderr)
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(match e {
                CliError::Usage(_) => 1,
                CliError::Io(_) => 2,
                CliError::Numeric(_) => 3,
            })
        }
    }
}
