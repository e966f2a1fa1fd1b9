//! One function per subcommand. Each reads its prerequisites from the output
//! directory, writes its artifacts there and returns the manifest.

use std::{
    fmt::Write as _,
    path::{Path, PathBuf},
};

use dropflat_core::{
    data::{load_mnist, synthetic_blobs, Dataset, MnistSplit},
    hessian::{alignment_trace, assemble_hessian, hessian_projection_scatter, AlignmentOptions, ProjectionPoint},
    landscape::{
        filter_normalized_direction, flatness_csv, interval_flatness_many, random_unit_direction, slice_1d, Direction,
        FlatnessOptions, FlatnessRecord,
    },
    linalg::{eigh, Spectrum, SpectrumSource},
    nn::{
        evaluate_batch, load_checkpoint, save_checkpoint, train, Architecture, HookAction,
        InferenceMode, OptimizerState, ParamSlice, ParamVector, StepRecord, TrainOptions, Trainer,
    },
    noise::{
        collect_trajectory, covariance, load_samples, load_spectrum, pca_flatness_scatter, powerlaw_fit,
        sample_gradients, save_samples, save_spectrum, PowerLawFit, SampleKind, SampleSet,
    },
    Error as CoreError, NetworkObjective, Objective,
};
use serde_json::{json, Value};

use crate::{
    config::{DataSource, ExperimentConfig},
    error::{CliError, CliResult},
    manifest::{unix_now, RunManifest},
};

pub const CHECKPOINT: &str = "checkpoint.fltlns";
pub const HESSIAN_SPECTRUM: &str = "spectrum-hessian.dfs";

pub fn samples_file(kind: SampleKind) -> String {
    format!("samples-{}.dfs", kind.name())
}

fn sampler_command(kind: SampleKind) -> &'static str {
    match kind {
        SampleKind::Trajectory => "sample-trajectory",
        SampleKind::Gradient => "sample-gradients",
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Train,
    SampleTrajectory,
    SampleGradients,
    Flatness,
    PcaFlatness,
    Hessian,
    HessianProjection,
    Alignment,
    Slice1d,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Train => "train",
            Command::SampleTrajectory => "sample-trajectory",
            Command::SampleGradients => "sample-gradients",
            Command::Flatness => "flatness",
            Command::PcaFlatness => "pca-flatness",
            Command::Hessian => "hessian",
            Command::HessianProjection => "hessian-projection",
            Command::Alignment => "alignment",
            Command::Slice1d => "slice1d",
        }
    }
}

pub struct Context {
    pub config: ExperimentConfig,
    pub out: PathBuf,
    pub data_dir: PathBuf,
}

impl Context {
    pub fn new(config: ExperimentConfig, out: impl Into<PathBuf>, data_dir: impl Into<PathBuf>) -> CliResult<Self> {
        config.validate()?;
        let out = out.into();
        std::fs::create_dir_all(&out).map_err(|e| CliError::io(&out, e))?;
        Ok(Self {
            config,
            out,
            data_dir: data_dir.into(),
        })
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        self.out.join(rel)
    }

    pub fn train_data(&self) -> CliResult<Dataset> {
        let cfg = &self.config;
        match cfg.data.source {
            DataSource::Mnist => {
                let ds = load_mnist(&self.data_dir, MnistSplit::Train).map_err(|e| data_error(e, &self.data_dir))?;
                Ok(ds.take_prefix(cfg.data.prefix)?)
            }
            DataSource::SyntheticBlobs => {
                let s = &cfg.data.synthetic;
                Ok(synthetic_blobs(s.n, cfg.model.widths[0], s.classes, s.spread, cfg.seed)?)
            }
        }
    }

    pub fn test_data(&self) -> CliResult<Option<Dataset>> {
        if self.config.data.source != DataSource::Mnist || !self.config.data.evaluate_test {
            return Ok(None);
        }
        load_mnist(&self.data_dir, MnistSplit::Test)
            .map(Some)
            .map_err(|e| data_error(e, &self.data_dir))
    }

    pub fn checkpoint(&self) -> CliResult<(Architecture, ParamVector)> {
        read_checkpoint(&self.path(CHECKPOINT))
    }

    pub fn slice(&self, arch: &Architecture) -> CliResult<ParamSlice> {
        Ok(ParamSlice::new(arch, self.config.analysis.slice)?)
    }

    fn write(&self, manifest: &mut RunManifest, rel: &str, bytes: &[u8]) -> CliResult<()> {
        let path = self.path(rel);
        std::fs::write(&path, bytes).map_err(|e| CliError::io(&path, e))?;
        manifest.add_artifact(&self.out, rel)
    }
}

fn data_error(e: CoreError, dir: &Path) -> CliError {
    CliError::from(e).context(format!(
        "loading MNIST from {} (set --data-dir or DROPFLAT_DATA_DIR; scripts/fetch_mnist.sh downloads it)",
        dir.display()
    ))
}

fn read_checkpoint(path: &Path) -> CliResult<(Architecture, ParamVector)> {
    if !path.exists() {
        return Err(CliError::missing(path, "train"));
    }
    Ok(load_checkpoint(path)?)
}

fn read_samples(ctx: &Context, kind: SampleKind) -> CliResult<SampleSet> {
    let path = ctx.path(&samples_file(kind));
    if !path.exists() {
        return Err(CliError::missing(&path, sampler_command(kind)));
    }
    Ok(load_samples(&path)?)
}

fn num(v: f64) -> Value {
    // JSON has no infinities; keep them readable.
    if v.is_finite() {
        json!(v)
    } else {
        json!(v.to_string())
    }
}

pub fn fit_json(fit: &Option<PowerLawFit>) -> Value {
    match fit {
        Some(f) => json!({
            "slope": num(f.slope),
            "intercept": num(f.intercept),
            "spearman": num(f.spearman),
            "used": f.used,
            "excluded": f.excluded,
        }),
        None => Value::Null,
    }
}

pub const FIT_CSV_HEADER: &str = "slope,intercept,spearman,used,excluded";

pub fn fit_csv(fit: &Option<PowerLawFit>) -> String {
    let mut s = format!("{FIT_CSV_HEADER}\n");
    if let Some(f) = fit {
        let _ = writeln!(s, "{},{},{},{},{}", f.slope, f.intercept, f.spearman, f.used, f.excluded);
    }
    s
}

fn curve_csv(curve: &[StepRecord]) -> String {
    let mut s = String::from("step,loss,accuracy\n");
    for r in curve {
        let _ = writeln!(s, "{},{},{}", r.step, r.loss, r.accuracy);
    }
    s
}

pub fn run(cmd: Command, ctx: &Context) -> CliResult<RunManifest> {
    let mut m = RunManifest::new(cmd.name(), &ctx.config, unix_now());
    if matches!(cmd, Command::PcaFlatness | Command::HessianProjection) {
        m.variant = Some(ctx.config.sampling.kind.name().to_string());
    }
    m.results = match cmd {
        Command::Train => run_train(ctx, &mut m)?,
        Command::SampleTrajectory => run_sample_trajectory(ctx, &mut m)?,
        Command::SampleGradients => run_sample_gradients(ctx, &mut m)?,
        Command::Flatness => run_flatness(ctx, &mut m)?,
        Command::PcaFlatness => run_pca_flatness(ctx, &mut m)?,
        Command::Hessian => run_hessian(ctx, &mut m)?,
        Command::HessianProjection => run_hessian_projection(ctx, &mut m)?,
        Command::Alignment => run_alignment(ctx, &mut m)?,
        Command::Slice1d => run_slice1d(ctx, &mut m)?,
    };
    m.write(&ctx.out)?;
    Ok(m)
}

/// Train and test metrics of a parameter vector under both inference modes.
pub fn accuracy_report(
    arch: &Architecture,
    params: &ParamVector,
    train: &Dataset,
    test: Option<&Dataset>,
) -> CliResult<Value> {
    let (loss, acc) = evaluate_batch(arch, params, train.batch(), InferenceMode::Plain)?;
    let (_, acc_scaled) = evaluate_batch(arch, params, train.batch(), InferenceMode::RateScaled)?;
    let mut v = json!({
        "train_loss": num(loss),
        "train_accuracy": acc,
        "train_accuracy_rate_scaled": acc_scaled,
    });
    if let Some(t) = test {
        let (_, ta) = evaluate_batch(arch, params, t.batch(), InferenceMode::Plain)?;
        let (_, ts) = evaluate_batch(arch, params, t.batch(), InferenceMode::RateScaled)?;
        v["test_accuracy"] = json!(ta);
        v["test_accuracy_rate_scaled"] = json!(ts);
    }
    Ok(v)
}

fn run_train(ctx: &Context, m: &mut RunManifest) -> CliResult<Value> {
    let cfg = &ctx.config;
    let seeds = cfg.seeds();
    let arch = cfg.architecture()?;
    let data = ctx.train_data()?;
    let params = ParamVector::init(&arch, cfg.model.init, seeds.init);
    let optimizer = OptimizerState::new(cfg.train.optimizer, cfg.train.lr, arch.num_params())?;
    let options = TrainOptions {
        steps: cfg.train.steps,
        mask_policy: cfg.train.mask_policy,
        mask_scope: cfg.train.mask_scope,
        seed: seeds.train,
    };
    let outcome = train(&arch, params, data.batch(), optimizer, options, |_, _| HookAction::Continue)?;
    save_checkpoint(&ctx.path(CHECKPOINT), &arch, &outcome.params)?;
    m.add_artifact(&ctx.out, CHECKPOINT)?;
    ctx.write(m, "train-curve.csv", curve_csv(&outcome.curve).as_bytes())?;
    let test = ctx.test_data()?;
    let mut results = accuracy_report(&arch, &outcome.params, &data, test.as_ref())?;
    results["steps"] = json!(outcome.curve.len());
    results["dataset"] = json!(data.provenance());
    results["final_masked_loss"] = num(outcome.curve.last().map_or(f64::NAN, |r| r.loss));
    Ok(results)
}

fn run_sample_trajectory(ctx: &Context, m: &mut RunManifest) -> CliResult<Value> {
    let cfg = &ctx.config;
    let (arch, params) = ctx.checkpoint()?;
    let data = ctx.train_data()?;
    let slice = ctx.slice(&arch)?;
    let optimizer = OptimizerState::new(cfg.train.optimizer, cfg.train.lr, arch.num_params())?;
    let mut trainer = Trainer::new(
        arch.clone(),
        params,
        data.batch(),
        optimizer,
        cfg.train.mask_policy,
        cfg.train.mask_scope,
        cfg.seeds().trajectory,
    )?;
    let run = match collect_trajectory(&mut trainer, &cfg.sampling.detector, cfg.sampling.n, &slice) {
        Ok(run) => run,
        Err(CoreError::PhaseTimeout {
            max_steps,
            last_loss,
            loss_curve,
        }) => {
            let mut s = String::from("step,loss\n");
            for (i, l) in loss_curve.iter().enumerate() {
                let _ = writeln!(s, "{},{}", i + 1, l);
            }
            let path = ctx.path("trajectory-timeout-curve.csv");
            std::fs::write(&path, s).map_err(|e| CliError::io(&path, e))?;
            return Err(CliError::numeric(format!(
                "exploration phase not detected within {max_steps} steps (last loss {last_loss:e}); loss curve written to {}",
                path.display()
            )));
        }
        Err(e) => return Err(e.into()),
    };
    save_samples(&ctx.path(&samples_file(SampleKind::Trajectory)), &run.samples)?;
    m.add_artifact(&ctx.out, &samples_file(SampleKind::Trajectory))?;
    ctx.write(m, "trajectory-curve.csv", curve_csv(&run.curve).as_bytes())?;
    let (lo, hi) = displacement_range(&run.samples);
    Ok(json!({
        "phase_step": run.phase_step,
        "n": run.samples.len(),
        "dim": run.samples.dim(),
        "step_range": [run.samples.meta().step_range.0, run.samples.meta().step_range.1],
        "min_displacement": num(lo),
        "max_displacement": num(hi),
    }))
}

/// Smallest and largest distance between consecutive samples.
pub fn displacement_range(s: &SampleSet) -> (f64, f64) {
    (1..s.len())
        .map(|i| {
            s.row(i)
                .iter()
                .zip(s.row(i - 1))
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt()
        })
        .fold((f64::INFINITY, 0.0f64), |(lo, hi), d| (lo.min(d), hi.max(d)))
}

fn run_sample_gradients(ctx: &Context, m: &mut RunManifest) -> CliResult<Value> {
    let cfg = &ctx.config;
    let (arch, params) = ctx.checkpoint()?;
    let data = ctx.train_data()?;
    let slice = ctx.slice(&arch)?;
    let samples = sample_gradients(
        &arch,
        &params,
        data.batch(),
        &slice,
        cfg.train.mask_scope,
        cfg.sampling.n,
        cfg.seeds().gradients,
    )?;
    save_samples(&ctx.path(&samples_file(SampleKind::Gradient)), &samples)?;
    m.add_artifact(&ctx.out, &samples_file(SampleKind::Gradient))?;
    Ok(json!({ "n": samples.len(), "dim": samples.dim() }))
}

/// Covariance spectrum of `samples` and interval flatness along its leading
/// eigenvectors, with the log-log fit of flatness against variance.
pub struct PcaFlatness {
    pub spectrum: Spectrum,
    pub records: Vec<FlatnessRecord>,
    pub fit: Option<PowerLawFit>,
}

pub fn pca_flatness(
    samples: &SampleSet,
    objective: &impl Objective,
    center: &[f64],
    k_top: usize,
    options: &FlatnessOptions,
) -> CliResult<PcaFlatness> {
    let source = match samples.kind() {
        SampleKind::Trajectory => SpectrumSource::TrajectoryCovariance,
        SampleKind::Gradient => SpectrumSource::GradientCovariance,
    };
    let spectrum = eigh(covariance(samples).view(), source)?;
    let k = k_top.min(spectrum.dim());
    let records = pca_flatness_scatter(&spectrum, objective, center, k, options)?;
    let pairs: Vec<(f64, f64)> = records
        .iter()
        .map(|r| (r.eigenvalue.unwrap_or(f64::NAN), r.profile.flatness))
        .collect();
    let fit = powerlaw_fit(&pairs).ok();
    Ok(PcaFlatness { spectrum, records, fit })
}

fn run_pca_flatness(ctx: &Context, m: &mut RunManifest) -> CliResult<Value> {
    let cfg = &ctx.config;
    let kind = cfg.sampling.kind;
    let samples = read_samples(ctx, kind)?;
    let (arch, params) = ctx.checkpoint()?;
    let data = ctx.train_data()?;
    let objective = NetworkObjective::new(&arch.without_dropout(), &params, data.batch(), ctx.slice(&arch)?)?;
    if samples.dim() != objective.dim() {
        return Err(CliError::config(format!(
            "{} has dimension {} but analysis.slice {} has {}",
            samples_file(kind),
            samples.dim(),
            cfg.analysis.slice,
            objective.dim()
        )));
    }
    let center = objective.center();
    let out = pca_flatness(&samples, &objective, &center, cfg.analysis.k_top, &cfg.analysis.flatness)?;
    let name = kind.name();
    let spectrum_file = format!("spectrum-{name}.dfs");
    save_spectrum(&ctx.path(&spectrum_file), &out.spectrum)?;
    m.add_artifact(&ctx.out, &spectrum_file)?;
    ctx.write(m, &format!("pca-flatness-{name}.csv"), flatness_csv(&out.records).as_bytes())?;
    ctx.write(m, &format!("fit-pca-flatness-{name}.csv"), fit_csv(&out.fit).as_bytes())?;
    Ok(json!({
        "kind": name,
        "directions": out.records.len(),
        "unbounded": out.records.iter().filter(|r| !r.profile.flatness.is_finite()).count(),
        "floor_substituted": out.records.iter().filter(|r| r.profile.flags.floor_substituted).count(),
        "fit": fit_json(&out.fit),
    }))
}

fn run_hessian(ctx: &Context, m: &mut RunManifest) -> CliResult<Value> {
    let cfg = &ctx.config;
    let (arch, params) = ctx.checkpoint()?;
    let data = ctx.train_data()?;
    let objective = NetworkObjective::new(&arch.without_dropout(), &params, data.batch(), ctx.slice(&arch)?)?;
    let h = assemble_hessian(&objective, &objective.center(), &cfg.analysis.hessian)?;
    let spectrum = eigh(h.matrix(), SpectrumSource::Hessian)?;
    save_spectrum(&ctx.path(HESSIAN_SPECTRUM), &spectrum)?;
    m.add_artifact(&ctx.out, HESSIAN_SPECTRUM)?;
    let mut csv = String::from("index,eigenvalue\n");
    for (i, l) in spectrum.values().iter().enumerate() {
        let _ = writeln!(csv, "{i},{l}");
    }
    ctx.write(m, "hessian-eigenvalues.csv", csv.as_bytes())?;
    let top = spectrum.values()[0];
    let bottom = spectrum.values()[spectrum.dim() - 1];
    Ok(json!({
        "dim": spectrum.dim(),
        "method": h.method().name(),
        "fd_step": h.step(),
        "raw_asymmetry": h.asymmetry(),
        "lambda_max": top,
        "lambda_min": bottom,
        "lambda_min_over_max": bottom / top,
        "trace": spectrum.values().iter().sum::<f64>(),
    }))
}

pub fn projection_fit(points: &[ProjectionPoint]) -> Option<PowerLawFit> {
    let pairs: Vec<(f64, f64)> = points.iter().map(|p| (p.eigenvalue, p.variance)).collect();
    powerlaw_fit(&pairs).ok()
}

fn run_hessian_projection(ctx: &Context, m: &mut RunManifest) -> CliResult<Value> {
    let cfg = &ctx.config;
    let kind = cfg.sampling.kind;
    let path = ctx.path(HESSIAN_SPECTRUM);
    if !path.exists() {
        return Err(CliError::missing(&path, "hessian"));
    }
    let spectrum = load_spectrum(&path)?;
    let all = read_samples(ctx, kind)?;
    let samples = all.prefix(cfg.analysis.projection_samples.min(all.len()))?;
    let k = cfg.analysis.k_top.min(spectrum.dim());
    let points = hessian_projection_scatter(&spectrum, &samples, k)?;
    let fit = projection_fit(&points);
    let mut csv = String::from("index,lambda_H,projected_variance\n");
    for p in &points {
        let _ = writeln!(csv, "{},{},{}", p.index, p.eigenvalue, p.variance);
    }
    let name = kind.name();
    ctx.write(m, &format!("hessian-projection-{name}.csv"), csv.as_bytes())?;
    ctx.write(m, &format!("fit-hessian-projection-{name}.csv"), fit_csv(&fit).as_bytes())?;
    Ok(json!({ "kind": name, "samples": samples.len(), "directions": points.len(), "fit": fit_json(&fit) }))
}

/// Unit Gaussian directions in `dim` coordinates, one seed each.
pub fn random_unit_directions(dim: usize, count: usize, seed: u64) -> CliResult<Vec<Direction>> {
    (0..count)
        .map(|i| Ok(random_unit_direction(dim, direction_seed(seed, i))?))
        .collect()
}

fn run_flatness(ctx: &Context, m: &mut RunManifest) -> CliResult<Value> {
    let cfg = &ctx.config;
    let (arch, params) = ctx.checkpoint()?;
    let data = ctx.train_data()?;
    let objective = NetworkObjective::new(&arch.without_dropout(), &params, data.batch(), ctx.slice(&arch)?)?;
    let dirs = random_unit_directions(objective.dim(), cfg.analysis.random_directions, cfg.seeds().directions)?;
    let center = objective.center();
    let profiles = interval_flatness_many(&objective, &center, &dirs, &cfg.analysis.flatness)?;
    let records: Vec<FlatnessRecord> = profiles
        .into_iter()
        .zip(&dirs)
        .enumerate()
        .map(|(i, (profile, d))| FlatnessRecord {
            direction_id: i,
            provenance: d.provenance(),
            eigenvalue: None,
            profile,
        })
        .collect();
    ctx.write(m, "flatness-random.csv", flatness_csv(&records).as_bytes())?;
    let mut f: Vec<f64> = records.iter().map(|r| r.profile.flatness).collect();
    f.sort_by(f64::total_cmp);
    Ok(json!({
        "directions": records.len(),
        "median_flatness": num(f[f.len() / 2]),
        "unbounded": f.iter().filter(|v| !v.is_finite()).count(),
    }))
}

fn run_alignment(ctx: &Context, m: &mut RunManifest) -> CliResult<Value> {
    let cfg = &ctx.config;
    let seeds = cfg.seeds();
    let arch = cfg.architecture()?.without_dropout();
    let data = ctx.train_data()?;
    let slice = ctx.slice(&arch)?;
    let params = ParamVector::init(&arch, cfg.model.init, seeds.init);
    let optimizer = OptimizerState::new(cfg.train.optimizer, cfg.train.lr, arch.num_params())?;
    let mut trainer = Trainer::new(
        arch,
        params,
        data.batch(),
        optimizer,
        cfg.train.mask_policy,
        cfg.train.mask_scope,
        seeds.train,
    )?;
    let al = &cfg.analysis.alignment;
    let options = AlignmentOptions {
        probe: al.probe.clone(),
        samples: al.samples,
        stride: al.stride,
        steps: al.steps,
        mask_scope: cfg.train.mask_scope,
        seed: seeds.alignment,
        hessian: cfg.analysis.hessian,
    };
    let trace = alignment_trace(&mut trainer, &slice, &options)?;
    ctx.write(m, "alignment.csv", trace.to_csv().as_bytes())?;
    ctx.write(m, "alignment-curve.csv", curve_csv(&trace.curve).as_bytes())?;
    Ok(json!({
        "logged_steps": trace.records.len(),
        "failures": trace.failures,
        "fraction_aligned": num(trace.fraction_aligned()),
        "median_ratio": num(trace.median_ratio()),
    }))
}

/// Filter-normalized 1-D slices of the full deterministic loss at `params`.
pub struct SliceProfiles {
    pub alphas: Vec<f64>,
    /// `losses[d][i]` is `f(alphas[i])` along direction `d`.
    pub losses: Vec<Vec<f64>>,
    /// `f(probe_alpha) - f(0)` per direction.
    pub rises: Vec<f64>,
}

pub fn slice_profiles(
    arch: &Architecture,
    params: &ParamVector,
    data: &Dataset,
    alphas: &[f64],
    probe_alpha: f64,
    directions: usize,
    seed: u64,
) -> CliResult<SliceProfiles> {
    let arch = arch.without_dropout();
    let objective = NetworkObjective::full(&arch, params, data.batch())?;
    let center = params.values().to_vec();
    let base = objective.loss(&center)?;
    let mut losses = Vec::with_capacity(directions);
    let mut rises = Vec::with_capacity(directions);
    for i in 0..directions {
        let (dir, report) = filter_normalized_direction(params, direction_seed(seed, i))?;
        if !report.zero_filters.is_empty() {
            log::warn!("direction {i}: zero-norm layers {:?} left unperturbed", report.zero_filters);
        }
        let profile = slice_1d(&objective, &center, &dir, alphas)?;
        losses.push(profile.iter().map(|p| p.loss).collect());
        let probe = slice_1d(&objective, &center, &dir, &[probe_alpha])?;
        rises.push(probe[0].loss - base);
    }
    Ok(SliceProfiles {
        alphas: alphas.to_vec(),
        losses,
        rises,
    })
}

pub fn direction_seed(seed: u64, i: usize) -> u64 {
    seed.wrapping_add((i as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

fn run_slice1d(ctx: &Context, m: &mut RunManifest) -> CliResult<Value> {
    let cfg = &ctx.config;
    let s1 = &cfg.analysis.slice1d;
    let (arch, params) = ctx.checkpoint()?;
    let data = ctx.train_data()?;
    let alphas = s1.alphas();
    let seed = cfg.seeds().directions;
    let primary = slice_profiles(&arch, &params, &data, &alphas, s1.probe_alpha, s1.directions, seed)?;
    let compare = match &s1.compare {
        Some(path) => {
            let (carch, cparams) = read_checkpoint(path)?;
            Some(slice_profiles(&carch, &cparams, &data, &alphas, s1.probe_alpha, s1.directions, seed)?)
        }
        None => None,
    };
    let mut csv = String::from(if compare.is_some() {
        "direction,alpha,loss,loss_compare\n"
    } else {
        "direction,alpha,loss\n"
    });
    for d in 0..s1.directions {
        for (i, a) in alphas.iter().enumerate() {
            let _ = write!(csv, "{d},{a},{}", primary.losses[d][i]);
            if let Some(c) = &compare {
                let _ = write!(csv, ",{}", c.losses[d][i]);
            }
            csv.push('\n');
        }
    }
    ctx.write(m, "slice1d.csv", csv.as_bytes())?;
    let mut results = json!({
        "directions": s1.directions,
        "probe_alpha": s1.probe_alpha,
        "rises": primary.rises.iter().map(|&r| num(r)).collect::<Vec<_>>(),
    });
    if let Some(c) = &compare {
        let flatter = primary.rises.iter().zip(&c.rises).filter(|(p, q)| p < q).count();
        results["compare_rises"] = json!(c.rises.iter().map(|&r| num(r)).collect::<Vec<_>>());
        results["flatter_than_compare"] = json!(flatter);
    }
    Ok(results)
}
