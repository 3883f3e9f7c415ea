//! `rpmf`: synthetic cohorts, ingestion, training and evaluation of the
//! adverse-event risk forecaster.

mod config;
mod manifest;

use std::fmt;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use rpmf::domain::{catalog_default, PatientRecord, VariableCatalog};
use rpmf::eval::{
    bootstrap_test_resample, bootstrap_train_resample, feature_importance, risk_trajectory, write_importance_csv,
    write_json, write_roc_csv, write_trajectory_csvs, BootstrapMode, EvalData,
};
use rpmf::ingest::{
    apply_filters, default_rules, parse_cohort, read_cohort_jsonl, read_exclusion_list, write_cohort_jsonl,
    write_stream_files, FilterRule,
};
use rpmf::model::{load_checkpoint, save_checkpoint, train_with, TrainedModel, CHECKPOINT_FORMAT_VERSION};
use rpmf::sampling::{
    build_dataset, patient_windows, read_dataset_cache, split_patients, write_dataset_cache, Dataset, WindowSample,
    CACHE_FORMAT_VERSION,
};
use rpmf::synth::{generate_streams, write_ground_truth};
use serde::{Deserialize, Serialize};

use config::RunConfig;
use manifest::{digests, manifest_path, write_manifest, FormatVersions, RunManifest};

#[derive(Debug, Parser, Serialize)]
#[command(name = "rpmf", version, about = "Adverse-event risk forecasting from remote patient monitoring data")]
struct Cli {
    /// TOML run configuration; flags and RPMF_* variables override it.
    #[arg(long, global = true, env = "RPMF_CONFIG")]
    config: Option<PathBuf>,
    /// Worker threads. 1 guarantees bit-identical results.
    #[arg(long, global = true, env = "RPMF_THREADS", default_value_t = 1, value_parser = clap::value_parser!(u64).range(1..))]
    threads: u64,
    /// More log output (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    #[serde(skip)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(rename_all = "kebab-case")]
enum Command {
    /// Generate a synthetic cohort as raw ingest files plus ground truth.
    Synth(SynthArgs),
    /// Parse, aggregate and filter raw files into a cohort file.
    Ingest(IngestArgs),
    /// Train a model on the training split of a cohort.
    Train(TrainArgs),
    /// Bootstrap accuracy and AUROC on the test split.
    Eval(EvalArgs),
    /// Attention-based variable importance on the test split.
    Importance(ImportanceArgs),
    /// Daily risk curve and event annotations for one patient.
    Trajectory(TrajectoryArgs),
}

#[derive(Debug, Args, Serialize)]
struct SynthArgs {
    #[arg(long, env = "RPMF_OUT")]
    out: PathBuf,
    #[arg(long, env = "RPMF_SEED")]
    seed: Option<u64>,
    #[arg(long, env = "RPMF_N_PATIENTS")]
    n_patients: Option<usize>,
}

#[derive(Debug, Args, Serialize)]
struct IngestArgs {
    #[arg(long, env = "RPMF_OBS")]
    obs: PathBuf,
    #[arg(long = "static", env = "RPMF_STATIC")]
    static_file: PathBuf,
    #[arg(long, env = "RPMF_EVENTS")]
    events: PathBuf,
    /// Patient ids to drop, one per line.
    #[arg(long, env = "RPMF_EXCLUDE_FILE")]
    exclude_file: Option<PathBuf>,
    #[arg(long, env = "RPMF_OUT")]
    out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
struct TrainArgs {
    #[arg(long, env = "RPMF_COHORT")]
    cohort: PathBuf,
    #[arg(long, env = "RPMF_OUT")]
    out: PathBuf,
    #[arg(long, env = "RPMF_SEED")]
    seed: Option<u64>,
    #[arg(long, env = "RPMF_EPOCHS")]
    epochs: Option<usize>,
    #[arg(long, env = "RPMF_LR")]
    lr: Option<f64>,
    /// Tokenised-window cache, reused when cohort, window and split match.
    #[arg(long, env = "RPMF_CACHE")]
    cache: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
enum Mode {
    TrainResample,
    TestResample,
}

impl From<Mode> for BootstrapMode {
    fn from(m: Mode) -> Self {
        match m {
            Mode::TrainResample => BootstrapMode::TrainResample,
            Mode::TestResample => BootstrapMode::TestResample,
        }
    }
}

#[derive(Debug, Args, Serialize)]
struct EvalArgs {
    #[arg(long, env = "RPMF_COHORT")]
    cohort: PathBuf,
    #[arg(long, env = "RPMF_MODEL")]
    model: PathBuf,
    /// Bootstrap iterations.
    #[arg(long, env = "RPMF_BOOTSTRAP")]
    bootstrap: Option<usize>,
    #[arg(long, value_enum, env = "RPMF_MODE")]
    mode: Option<Mode>,
    #[arg(long, env = "RPMF_SEED")]
    seed: Option<u64>,
    #[arg(long, env = "RPMF_THRESHOLD")]
    threshold: Option<f64>,
    #[arg(long, env = "RPMF_OUT")]
    out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
struct ImportanceArgs {
    #[arg(long, env = "RPMF_MODEL")]
    model: PathBuf,
    #[arg(long, env = "RPMF_COHORT")]
    cohort: PathBuf,
    #[arg(long, env = "RPMF_OUT")]
    out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
struct TrajectoryArgs {
    #[arg(long, env = "RPMF_MODEL")]
    model: PathBuf,
    #[arg(long, env = "RPMF_COHORT")]
    cohort: PathBuf,
    #[arg(long, env = "RPMF_PATIENT")]
    patient: String,
    #[arg(long, env = "RPMF_OUT")]
    out: PathBuf,
}

/// A problem with the invocation rather than the data; exits with 2.
#[derive(Debug)]
struct Usage(String);

impl fmt::Display for Usage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    Usage(msg.into()).into()
}

struct Run<'a> {
    cli: &'a Cli,
    cfg: RunConfig,
    catalog: VariableCatalog,
}

impl Run<'_> {
    fn threads(&self) -> usize {
        self.cli.threads as usize
    }

    fn finish(
        &self,
        command: &'static str,
        out: &Path,
        is_dir: bool,
        inputs: &[PathBuf],
        outputs: &[PathBuf],
    ) -> anyhow::Result<()> {
        let m = RunManifest {
            tool: "rpmf",
            version: env!("CARGO_PKG_VERSION"),
            command,
            arguments: self.cli,
            config: &self.cfg,
            format_versions: FormatVersions { checkpoint: CHECKPOINT_FORMAT_VERSION, dataset_cache: CACHE_FORMAT_VERSION },
            inputs: digests(inputs)?,
            outputs: digests(outputs)?,
        };
        write_manifest(&m, &manifest_path(out, is_dir))
    }
}

fn validate(cfg: &RunConfig) -> anyhow::Result<()> {
    cfg.model.validate().map_err(|e| usage(format!("model config: {e}")))?;
    cfg.window.validate().map_err(|e| usage(format!("window config: {e}")))?;
    cfg.synth.validate().map_err(|e| usage(format!("synth config: {e}")))?;
    if !(cfg.split.train_ratio > 0.0 && cfg.split.train_ratio < 1.0) {
        return Err(usage(format!("split.train_ratio must lie in (0, 1), got {}", cfg.split.train_ratio)));
    }
    if cfg.eval.n_boot == 0 {
        return Err(usage("eval.n_boot must be positive"));
    }
    Ok(())
}

fn ensure_distinct(out: &Path, inputs: &[&Path]) -> anyhow::Result<()> {
    let resolved = |p: &Path| p.canonicalize().unwrap_or_else(|_| p.to_path_buf());
    if inputs.iter().any(|i| resolved(i) == resolved(out)) {
        return Err(usage(format!("output {} would overwrite an input", out.display())));
    }
    Ok(())
}

fn read_cohort(path: &Path, catalog: &VariableCatalog) -> anyhow::Result<Vec<PatientRecord>> {
    read_cohort_jsonl(path, catalog).with_context(|| format!("reading cohort {}", path.display()))
}

fn load_model(path: &Path) -> anyhow::Result<TrainedModel> {
    load_checkpoint(path).with_context(|| format!("loading model {}", path.display()))
}

/// Test-split windows under the checkpoint's own split and statistics.
fn test_windows(cohort: &[PatientRecord], ckpt: &TrainedModel) -> anyhow::Result<Vec<WindowSample>> {
    let split = split_patients(cohort, &ckpt.split)?;
    let windows: Vec<WindowSample> = cohort
        .iter()
        .filter(|r| split.is_test(&r.patient_id))
        .flat_map(|r| patient_windows(r, &ckpt.norm_stats, &ckpt.window))
        .collect();
    if windows.is_empty() {
        bail!("the test split has no windows");
    }
    Ok(windows)
}

fn synth(run: &mut Run, a: &SynthArgs) -> anyhow::Result<()> {
    if let Some(s) = a.seed {
        run.cfg.synth.seed = s;
    }
    if let Some(n) = a.n_patients {
        run.cfg.synth.n_patients = n;
    }
    run.cfg.synth.validate().map_err(|e| usage(e.to_string()))?;
    std::fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    let (streams, truth) = generate_streams(&run.cfg.synth, &run.catalog)?;
    let files = ["observations.jsonl", "static.csv", "events.jsonl", "ground_truth.jsonl"].map(|f| a.out.join(f));
    write_stream_files(&streams, &run.catalog, &files[0], &files[1], &files[2])?;
    write_ground_truth(&truth, &files[3])?;
    let epochs: usize = streams.iter().map(|s| s.epochs.len()).sum();
    let events: usize = truth.patients.iter().map(|p| p.events.len()).sum();
    println!(
        "{} patients, {epochs} sensor epochs, {events} adverse events -> {}",
        streams.len(),
        a.out.display()
    );
    run.finish("synth", &a.out, true, &[], &files)
}

fn ingest(run: &mut Run, a: &IngestArgs) -> anyhow::Result<()> {
    let mut inputs = vec![a.obs.clone(), a.static_file.clone(), a.events.clone()];
    inputs.extend(a.exclude_file.iter().cloned());
    ensure_distinct(&a.out, &inputs.iter().map(PathBuf::as_path).collect::<Vec<_>>())?;
    let (records, parse) = parse_cohort(&a.obs, &a.static_file, &a.events, &run.catalog, &run.cfg.ingest)?;
    println!(
        "parsed {} patients: {} observation lines, {} epoch lines ({} clipped), {} event lines",
        parse.patients, parse.observation_lines, parse.epoch_lines, parse.epochs_clipped, parse.event_lines
    );
    let excluded = match &a.exclude_file {
        Some(p) => read_exclusion_list(p)?,
        None => Default::default(),
    };
    let rules: Vec<FilterRule> = default_rules(excluded)
        .into_iter()
        .map(|r| match r {
            FilterRule::MinRpmDays { .. } => FilterRule::MinRpmDays { min_days: run.cfg.filter.min_rpm_days },
            other => other,
        })
        .collect();
    let (kept, report) = apply_filters(records, &rules, &run.catalog);
    println!("{report}");
    if let Some(parent) = a.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent)?;
    }
    write_cohort_jsonl(&kept, &a.out)?;
    run.finish("ingest", &a.out, false, &inputs, std::slice::from_ref(&a.out))
}

#[derive(Serialize, Deserialize, PartialEq)]
struct CacheKey {
    cohort_sha256: String,
    window: rpmf::sampling::WindowSpec,
    split: rpmf::sampling::SplitConfig,
}

fn cache_key_path(cache: &Path) -> PathBuf {
    let name = cache.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    cache.with_file_name(format!("{name}.key"))
}

fn dataset(run: &Run, cohort_path: &Path, cohort: &[PatientRecord], cache: Option<&Path>) -> anyhow::Result<Dataset> {
    let build = || build_dataset(cohort, &run.cfg.window, &run.cfg.split, &run.catalog);
    let Some(cache) = cache else { return Ok(build()?) };
    let key = CacheKey {
        cohort_sha256: manifest::sha256_file(cohort_path)?,
        window: run.cfg.window,
        split: run.cfg.split,
    };
    let key_path = cache_key_path(cache);
    let stored: Option<CacheKey> = std::fs::read_to_string(&key_path).ok().and_then(|t| serde_json::from_str(&t).ok());
    if stored.as_ref() == Some(&key) {
        match read_dataset_cache(cache) {
            Ok((ds, _)) => {
                log::info!("using dataset cache {}", cache.display());
                return Ok(ds);
            }
            Err(e) => log::warn!("ignoring unreadable cache: {e}"),
        }
    }
    let ds = build()?;
    write_dataset_cache(&ds, &run.cfg.window, cache)?;
    std::fs::write(&key_path, serde_json::to_string(&key)?)?;
    Ok(ds)
}

fn train(run: &mut Run, a: &TrainArgs) -> anyhow::Result<()> {
    if let Some(s) = a.seed {
        run.cfg.model.seed = s;
    }
    if let Some(e) = a.epochs {
        run.cfg.model.epochs = e;
    }
    if let Some(lr) = a.lr {
        run.cfg.model.lr = lr;
    }
    run.cfg.model.threads = run.threads();
    validate(&run.cfg)?;
    ensure_distinct(&a.out, &[&a.cohort])?;
    let cohort = read_cohort(&a.cohort, &run.catalog)?;
    let ds = dataset(run, &a.cohort, &cohort, a.cache.as_deref())?;
    let cs = ds.class_stats;
    println!(
        "train: {} windows ({} positive); test: {} windows ({} positive)",
        cs.train_windows, cs.train_positive, cs.test_windows, cs.test_positive
    );
    let epochs = run.cfg.model.epochs;
    let (forecaster, _) = train_with(&ds.train, run.catalog.len(), run.cfg.model, |e| {
        println!("epoch {:>3}/{epochs}  loss {:.6}", e.epoch, e.mean_loss);
    })?;
    let model = TrainedModel {
        forecaster,
        norm_stats: ds.stats,
        catalog: run.catalog.clone(),
        window: run.cfg.window,
        split: run.cfg.split,
    };
    if let Some(parent) = a.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent)?;
    }
    save_checkpoint(&model, &a.out)?;
    let mut outputs = vec![a.out.clone()];
    if let Some(c) = &a.cache {
        outputs.push(c.clone());
    }
    run.finish("train", &a.out, false, std::slice::from_ref(&a.cohort), &outputs)
}

fn eval(run: &mut Run, a: &EvalArgs) -> anyhow::Result<()> {
    if let Some(n) = a.bootstrap {
        run.cfg.eval.n_boot = n;
    }
    if let Some(m) = a.mode {
        run.cfg.eval.mode = m.into();
    }
    if let Some(s) = a.seed {
        run.cfg.eval.seed = s;
    }
    if let Some(t) = a.threshold {
        run.cfg.eval.threshold = t;
    }
    if run.cfg.eval.n_boot == 0 {
        return Err(usage("--bootstrap must be positive"));
    }
    let ckpt = load_model(&a.model)?;
    let cohort = read_cohort(&a.cohort, &ckpt.catalog)?;
    let mut model_cfg = ckpt.forecaster.config;
    model_cfg.threads = run.threads();
    let test = test_windows(&cohort, &ckpt)?;
    let report = match run.cfg.eval.mode {
        BootstrapMode::TestResample => {
            let preds: Vec<f64> = ckpt.forecaster.predict_all(&test, run.threads())?.iter().map(|p| p.risk).collect();
            let labels: Vec<u8> = test.iter().map(|s| s.label).collect();
            bootstrap_test_resample(&preds, &labels, &run.cfg.eval)?
        }
        BootstrapMode::TrainResample => {
            let data = EvalData::build(&cohort, &ckpt.catalog, &ckpt.window, &ckpt.split)?;
            bootstrap_train_resample(&data, ckpt.forecaster.n_vars(), &model_cfg, &run.cfg.eval)?
        }
    };
    let importance = feature_importance(&ckpt.forecaster, &test, &ckpt.catalog, run.threads())?;

    std::fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    let files = ["report.json", "roc.csv", "importance.csv"].map(|f| a.out.join(f));
    write_json(&report, &files[0])?;
    write_roc_csv(&report.roc_points, &files[1])?;
    write_importance_csv(&importance, &files[2])?;
    println!(
        "{} windows, positive rate {:.4}, {} x {}",
        report.n_windows,
        report.positive_rate,
        report.n_boot,
        report.mode.as_str()
    );
    for (name, m) in [("AUROC", &report.auroc), ("accuracy", &report.accuracy)] {
        println!("{name:<9} {:.4} [{:.4}, {:.4}]", m.point, m.ci_low, m.ci_high);
    }
    run.finish("eval", &a.out, true, &[a.cohort.clone(), a.model.clone()], &files)
}

fn importance(run: &mut Run, a: &ImportanceArgs) -> anyhow::Result<()> {
    ensure_distinct(&a.out, &[&a.cohort, &a.model])?;
    let ckpt = load_model(&a.model)?;
    let cohort = read_cohort(&a.cohort, &ckpt.catalog)?;
    let test = test_windows(&cohort, &ckpt)?;
    let report = feature_importance(&ckpt.forecaster, &test, &ckpt.catalog, run.threads())?;
    if let Some(parent) = a.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent)?;
    }
    write_importance_csv(&report, &a.out)?;
    for (i, name) in report.ranking.iter().take(10).enumerate() {
        let score = report.entries.iter().find(|e| &e.variable == name).map_or(0.0, |e| e.score);
        println!("{:>2}. {name:<30} {score:.4}", i + 1);
    }
    for (cat, s) in &report.category_scores {
        println!("{cat:<9} {s:.4}");
    }
    run.finish("importance", &a.out, false, &[a.cohort.clone(), a.model.clone()], std::slice::from_ref(&a.out))
}

fn trajectory(run: &mut Run, a: &TrajectoryArgs) -> anyhow::Result<()> {
    let ckpt = load_model(&a.model)?;
    let cohort = read_cohort(&a.cohort, &ckpt.catalog)?;
    let Some(rec) = cohort.iter().find(|r| r.patient_id == a.patient) else {
        bail!("patient {} is not in {}", a.patient, a.cohort.display());
    };
    let traj = risk_trajectory(&ckpt.forecaster, rec, &ckpt.norm_stats, &ckpt.window, &ckpt.catalog)?;
    std::fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    write_trajectory_csvs(&traj, &a.out)?;
    let files = [
        a.out.join(format!("trajectory_{}.csv", traj.patient_id)),
        a.out.join(format!("events_{}.csv", traj.patient_id)),
    ];
    println!("{}: {} daily risk points, {} annotated events", traj.patient_id, traj.points.len(), traj.annotations.len());
    run.finish("trajectory", &a.out, true, &[a.cohort.clone(), a.model.clone()], &files)
}

fn run(cli: &Cli) -> anyhow::Result<()> {
    let cfg = RunConfig::load(cli.config.as_deref()).map_err(|e| usage(format!("{e:#}")))?;
    let mut run = Run { cli, cfg, catalog: catalog_default() };
    match &cli.command {
        Command::Synth(a) => synth(&mut run, a),
        Command::Ingest(a) => ingest(&mut run, a),
        Command::Train(a) => train(&mut run, a),
        Command::Eval(a) => eval(&mut run, a),
        Command::Importance(a) => importance(&mut run, a),
        Command::Trajectory(a) => trajectory(&mut run, a),
    }
}

/// The error chain joined by `: `, skipping causes already quoted by the
/// message above them.
fn describe(e: &anyhow::Error) -> String {
    let mut out = String::new();
    let mut last = String::new();
    for cause in e.chain() {
        let msg = cause.to_string();
        if last.ends_with(&msg) {
            continue;
        }
        if !out.is_empty() {
            out.push_str(": ");
        }
        out.push_str(&msg);
        last = msg;
    }
    out
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
    // The core crate's data-parallel stages use rayon's global pool.
    if std::env::var_os("RAYON_NUM_THREADS").is_none() {
        std::env::set_var("RAYON_NUM_THREADS", cli.threads.to_string());
    }
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", describe(&e));
            if e.downcast_ref::<Usage>().is_some() {
                eprintln!("run `rpmf --help` for usage");
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
