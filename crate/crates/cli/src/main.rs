use std::{path::PathBuf, process::ExitCode};

use clap::{Args, Parser, Subcommand};
use dropflat::{
    config::ExperimentConfig,
    manifest::{unix_now, RunManifest},
    pipeline::{self, Command, Context},
    report, CliError, CliResult,
};

#[derive(Parser)]
#[command(name = "dropflat", version, about = "Dropout noise geometry and loss-landscape flatness experiments")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Args, Clone)]
struct Common {
    /// Experiment config (TOML). Defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the master seed from the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory for artifacts and manifests.
    #[arg(long, global = true, default_value = "runs/default")]
    out: PathBuf,
    /// Directory holding the MNIST IDX files.
    #[arg(long, global = true, env = "DROPFLAT_DATA_DIR")]
    data_dir: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Train from the config and write a checkpoint plus loss curve.
    Train(Common),
    /// Continue training from the checkpoint and record the weight trajectory.
    SampleTrajectory(Common),
    /// Sample mask-induced gradients at the checkpoint.
    SampleGradients(Common),
    /// Interval flatness along random unit directions.
    Flatness(Common),
    /// Flatness along the principal directions of the sampled noise.
    PcaFlatness(Common),
    /// Hessian of the slice at the checkpoint and its spectrum.
    Hessian(Common),
    /// Projected sample variance along Hessian eigenvectors.
    HessianProjection(Common),
    /// Tr(H Sigma) against its isotropic baseline along a plain GD run.
    Alignment(Common),
    /// Filter-normalized 1-D loss slices, optionally against a second checkpoint.
    Slice1d(Common),
    /// Verify manifests in the given directories and write summary.json.
    Report {
        #[command(flatten)]
        common: Common,
        /// Run directories to aggregate (defaults to --out).
        dirs: Vec<PathBuf>,
    },
}

fn load_config(common: &Common) -> CliResult<ExperimentConfig> {
    let mut cfg = match &common.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn data_dir(common: &Common, cfg: &ExperimentConfig) -> PathBuf {
    common
        .data_dir
        .clone()
        .or_else(|| cfg.data.dir.clone())
        .unwrap_or_else(|| PathBuf::from("data/mnist"))
}

fn run_analysis(cmd: Command, common: &Common) -> CliResult<()> {
    let cfg = load_config(common)?;
    let data = data_dir(common, &cfg);
    let ctx = Context::new(cfg, &common.out, data)?;
    let m = pipeline::run(cmd, &ctx)?;
    println!("{}", serde_json::to_string_pretty(&m.results).expect("results serialize"));
    Ok(())
}

fn run_report(common: &Common, dirs: &[PathBuf]) -> CliResult<()> {
    let cfg = load_config(common)?;
    let dirs = if dirs.is_empty() { vec![common.out.clone()] } else { dirs.to_vec() };
    let (summary, verdicts) = report::report(&dirs, &common.out)?;
    let mut m = RunManifest::new("report", &cfg, unix_now());
    m.add_artifact(&common.out, report::SUMMARY)?;
    m.results = summary["all_pass"].clone();
    m.write(&common.out)?;
    for v in &verdicts {
        println!("{}", v.line());
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result: Result<(), CliError> = match &cli.command {
        Cmd::Train(c) => run_analysis(Command::Train, c),
        Cmd::SampleTrajectory(c) => run_analysis(Command::SampleTrajectory, c),
        Cmd::SampleGradients(c) => run_analysis(Command::SampleGradients, c),
        Cmd::Flatness(c) => run_analysis(Command::Flatness, c),
        Cmd::PcaFlatness(c) => run_analysis(Command::PcaFlatness, c),
        Cmd::Hessian(c) => run_analysis(Command::Hessian, c),
        Cmd::HessianProjection(c) => run_analysis(Command::HessianProjection, c),
        Cmd::Alignment(c) => run_analysis(Command::Alignment, c),
        Cmd::Slice1d(c) => run_analysis(Command::Slice1d, c),
        Cmd::Report { common, dirs } => run_report(common, dirs),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
