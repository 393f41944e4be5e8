//! The `selfeval` command line: argument parsing and subcommand drivers.

use std::path::{Path, PathBuf};

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::benchmark::dataset::{read_examples, read_pairs, read_scenes, write_examples, write_pairs, write_scenes};
use crate::benchmark::fixtures::{to_sample, training_scenes};
use crate::benchmark::{
    build_task_suite, build_winoground_pairs, scale_mismatch_fixture, ItmExample, ScaleMismatchFixture, Task,
    TaskSpec, ORACLE_CLASS_VAR,
};
use crate::condition::ConditionVocabulary;
use crate::config::{hex, ConfigError, RunConfig};
use crate::denoiser::checkpoint::{self, CheckpointError};
use crate::denoiser::train::continue_training;
use crate::denoiser::{train_mlp, Denoiser, MlpDenoiser, Optimizer, TrainError};
use crate::estimator::{Aggregation, Estimator, LatentMode};
use crate::eval::{jensen_summary, summarize, worker_pool, EvalError, Evaluator, ExampleOutcome, ModelSource};
use crate::metrics::{ablation_sweep, spearman_rho, votes_from_predictions, AblationAxis, MetricsError, TaskResult};
use crate::report::{
    prediction_rows, read_predictions, timestamp_run_id, write_estimates, write_predictions, EvalReport, TaskVotes,
};
use crate::schedule::NoiseSchedule;
use crate::trajectory::Coupling;
use crate::winoground::{image_text_scores, score_pair, PairScores, Scorer, WinogroundScores};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Data(String),
    #[error("{0}")]
    Numerical(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Numerical(_) => 3,
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        match e {
            ConfigError::Read { .. } => CliError::Data(e.to_string()),
            _ => CliError::Usage(e.to_string()),
        }
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        if e.is_numerical() {
            CliError::Numerical(e.to_string())
        } else {
            CliError::Data(e.to_string())
        }
    }
}

impl From<MetricsError> for CliError {
    fn from(e: MetricsError) -> Self {
        CliError::Data(e.to_string())
    }
}

fn data_err(e: impl std::fmt::Display) -> CliError {
    CliError::Data(e.to_string())
}

#[derive(Debug, Parser)]
#[command(name = "selfeval", version, about = "Likelihood-based evaluation of conditional diffusion models")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write task suites, swap pairs, training scenes and a manifest.
    Generate(CommonArgs),
    /// Train the MLP denoiser on generated training scenes.
    Train(TrainArgs),
    /// Evaluate a checkpoint or the analytic oracle on the task suites.
    Evaluate(EvalArgs),
    /// Image, text and group scores on swap pairs or the scale fixture.
    Winoground(WinogroundArgs),
    /// Sweep T, N or the seed and tabulate per-task accuracy.
    Ablate(AblateArgs),
    /// Summarize a report, optionally comparing two evaluation runs.
    Report(ReportArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum LatentModeArg {
    Forward,
    Reverse,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum AggregationArg {
    JensenSum,
    LogSumExp,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum CouplingArg {
    Markov,
    Shared,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ScorerArg {
    Selfeval,
    Elbo,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum OptimizerArg {
    Adam,
    Sgd,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum AxisArg {
    #[value(name = "T")]
    T,
    #[value(name = "N")]
    N,
    Seed,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum FixtureArg {
    Pairs,
    Scale,
}

#[derive(Debug, Clone, Args)]
pub struct CommonArgs {
    /// JSON run configuration; flags override its fields.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, short)]
    pub output: Option<PathBuf>,
    /// Master seed.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, env = "SELFEVAL_WORKERS")]
    pub workers: Option<usize>,
    #[arg(long)]
    pub run_id: Option<String>,
    #[arg(long)]
    pub image_size: Option<usize>,
    #[arg(long)]
    pub suite_size: Option<usize>,
    #[arg(long)]
    pub repeats: Option<usize>,
    /// Comma-separated task names.
    #[arg(long, value_delimiter = ',')]
    pub tasks: Option<Vec<String>>,
    #[arg(long)]
    pub pairs: Option<usize>,
    #[arg(long)]
    pub train_size: Option<usize>,
    /// Number of trials N.
    #[arg(long)]
    pub trials: Option<usize>,
    /// Number of timesteps T.
    #[arg(long)]
    pub timesteps: Option<usize>,
    #[arg(long, value_enum)]
    pub latent_mode: Option<LatentModeArg>,
    #[arg(long, value_enum)]
    pub aggregation: Option<AggregationArg>,
    #[arg(long, value_enum)]
    pub coupling: Option<CouplingArg>,
    /// Subtract log q(x_{1:T}|x0) from each trial.
    #[arg(long)]
    pub proposal_correction: bool,
    #[arg(long, value_enum)]
    pub scorer: Option<ScorerArg>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long, value_enum)]
    pub optimizer: Option<OptimizerArg>,
    /// Accept inputs whose embedded config hash does not match.
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Clone, Args)]
pub struct ModelArgs {
    #[arg(long, conflicts_with = "oracle")]
    pub checkpoint: Option<PathBuf>,
    /// Use the analytic render-mean oracle instead of a checkpoint.
    #[arg(long)]
    pub oracle: bool,
}

#[derive(Debug, Clone, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Directory written by `generate`; defaults to <output>/datasets.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Continue from this checkpoint.
    #[arg(long)]
    pub resume: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long)]
    pub data: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct WinogroundArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "pairs")]
    pub fixture: FixtureArg,
}

#[derive(Debug, Clone, Args)]
pub struct AblateArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long, value_enum)]
    pub axis: AxisArg,
    /// Comma-separated values for the axis.
    #[arg(long, value_delimiter = ',', required = true)]
    pub values: Vec<u64>,
}

#[derive(Debug, Clone, Args)]
pub struct ReportArgs {
    /// Directory of an `evaluate` run.
    #[arg(long)]
    pub input: PathBuf,
    /// Second run to compare against by votes and rank correlation.
    #[arg(long)]
    pub compare: Option<PathBuf>,
}

/// Parses `args` (including the program name) and runs the command.
pub fn run_from<I, T>(args: I) -> Result<(), CliError>
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            let _ = e.print();
            return Ok(());
        }
        Err(e) => {
            let msg = e.render().to_string();
            return Err(CliError::Usage(msg.strip_prefix("error: ").unwrap_or(&msg).trim_end().to_string()));
        }
    };
    run(cli)
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Generate(a) => cmd_generate(&a),
        Command::Train(a) => cmd_train(&a),
        Command::Evaluate(a) => cmd_evaluate(&a),
        Command::Winoground(a) => cmd_winoground(&a),
        Command::Ablate(a) => cmd_ablate(&a),
        Command::Report(a) => cmd_report(&a),
    }
}

/// Builds the run configuration from an optional file plus flag overrides.
pub fn resolve_config(a: &CommonArgs) -> Result<RunConfig, CliError> {
    let mut c = match &a.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(v) = &a.output {
        c.output_dir = v.clone();
    }
    if let Some(v) = a.seed {
        c.master_seed = v;
    }
    c.workers = a.workers.unwrap_or_else(|| {
        if a.config.is_some() {
            c.workers
        } else {
            std::thread::available_parallelism().map_or(1, |n| n.get())
        }
    });
    let b = &mut c.benchmark;
    if let Some(v) = a.image_size {
        b.image_size = v;
    }
    if let Some(v) = a.suite_size {
        b.suite_size = v;
    }
    if let Some(v) = a.repeats {
        b.repeats = v;
    }
    if let Some(v) = a.pairs {
        b.winoground_pairs = v;
    }
    if let Some(v) = a.train_size {
        b.train_size = v;
    }
    if let Some(names) = &a.tasks {
        b.tasks = names
            .iter()
            .map(|n| Task::parse(n).ok_or_else(|| CliError::Usage(format!("unknown task {n}"))))
            .collect::<Result<_, _>>()?;
    }
    let e = &mut c.estimator;
    if let Some(v) = a.trials {
        e.trials = v;
    }
    if let Some(v) = a.timesteps {
        e.timesteps = v;
    }
    if let Some(v) = a.latent_mode {
        e.latent_mode = match v {
            LatentModeArg::Forward => LatentMode::ForwardAnchored,
            LatentModeArg::Reverse => LatentMode::ReverseAnchored,
        };
    }
    if let Some(v) = a.aggregation {
        e.aggregation = match v {
            AggregationArg::JensenSum => Aggregation::JensenSum,
            AggregationArg::LogSumExp => Aggregation::LogSumExp,
        };
    }
    if let Some(v) = a.coupling {
        e.coupling = match v {
            CouplingArg::Markov => Coupling::Markov,
            CouplingArg::Shared => Coupling::Shared,
        };
    }
    if a.proposal_correction {
        e.proposal_correction = true;
    }
    if let Some(v) = a.scorer {
        e.scorer = match v {
            ScorerArg::Selfeval => Scorer::SelfEval,
            ScorerArg::Elbo => Scorer::Elbo,
        };
    }
    let t = &mut c.trainer;
    if let Some(v) = a.epochs {
        t.epochs = v;
    }
    if let Some(v) = a.lr {
        t.lr = v;
    }
    if let Some(v) = a.batch_size {
        t.batch_size = v;
    }
    if let Some(v) = a.optimizer {
        t.optimizer = match v {
            OptimizerArg::Adam => Optimizer::default(),
            OptimizerArg::Sgd => Optimizer::SgdMomentum { momentum: 0.9 },
        };
    }
    c.validate()?;
    Ok(c)
}

fn create_dir(p: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(p).map_err(|e| CliError::Data(format!("cannot create {}: {e}", p.display())))
}

fn write_file(p: &Path, contents: impl AsRef<[u8]>) -> Result<(), CliError> {
    std::fs::write(p, contents).map_err(|e| CliError::Data(format!("cannot write {}: {e}", p.display())))
}

fn sha256_file(p: &Path) -> Result<String, CliError> {
    let bytes = std::fs::read(p).map_err(|e| CliError::Data(format!("cannot read {}: {e}", p.display())))?;
    Ok(hex(&Sha256::digest(bytes)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ManifestEntry {
    pub file: String,
    pub sha256: String,
    pub records: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Manifest {
    /// Hash of the seed and benchmark parameters that produced the files.
    pub config_hash: String,
    pub files: Vec<ManifestEntry>,
}

pub const MANIFEST: &str = "manifest.json";
pub const PAIRS_FILE: &str = "winoground.jsonl";
pub const TRAIN_FILE: &str = "train.jsonl";
pub const CHECKPOINT_FILE: &str = "model.ckpt";

pub fn task_file(t: Task) -> String {
    format!("{}.jsonl", t.name())
}

fn data_dir(c: &RunConfig, explicit: &Option<PathBuf>) -> PathBuf {
    explicit.clone().unwrap_or_else(|| c.output_dir.join("datasets"))
}

/// Suites for every configured task and repeat seed, concatenated.
pub fn generate_suites(c: &RunConfig, task: Task) -> Result<Vec<ItmExample>, CliError> {
    let mut out = Vec::new();
    for seed in c.repeat_seeds() {
        out.extend(
            build_task_suite(&TaskSpec::new(task), c.benchmark.suite_size, seed, c.benchmark.image_size)
                .map_err(data_err)?,
        );
    }
    Ok(out)
}

pub fn cmd_generate(a: &CommonArgs) -> Result<(), CliError> {
    let c = resolve_config(a)?;
    let dir = data_dir(&c, &None);
    create_dir(&dir)?;
    let mut files = Vec::new();
    for &t in &c.benchmark.tasks {
        let ex = generate_suites(&c, t)?;
        let name = task_file(t);
        write_examples(&dir.join(&name), &ex).map_err(data_err)?;
        files.push((name, ex.len()));
    }
    let pairs = build_winoground_pairs(c.benchmark.winoground_pairs.max(1), c.master_seed, c.benchmark.image_size)
        .map_err(data_err)?;
    write_pairs(&dir.join(PAIRS_FILE), &pairs).map_err(data_err)?;
    files.push((PAIRS_FILE.to_string(), pairs.len()));
    if c.benchmark.train_size > 0 {
        let scenes = training_scenes(c.benchmark.train_size, c.master_seed, c.benchmark.image_size).map_err(data_err)?;
        write_scenes(&dir.join(TRAIN_FILE), &scenes).map_err(data_err)?;
        files.push((TRAIN_FILE.to_string(), scenes.len()));
    }
    let manifest = Manifest {
        config_hash: c.data_hash(),
        files: files
            .into_iter()
            .map(|(file, records)| Ok(ManifestEntry { sha256: sha256_file(&dir.join(&file))?, file, records }))
            .collect::<Result<_, CliError>>()?,
    };
    let mut json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    json.push('\n');
    write_file(&dir.join(MANIFEST), json)?;
    eprintln!("wrote {} files to {}", manifest.files.len() + 1, dir.display());
    Ok(())
}

fn check_manifest(c: &RunConfig, dir: &Path, force: bool) -> Result<Manifest, CliError> {
    let p = dir.join(MANIFEST);
    let text = std::fs::read_to_string(&p).map_err(|e| CliError::Data(format!("cannot read {}: {e}", p.display())))?;
    let m: Manifest = serde_json::from_str(&text).map_err(|e| CliError::Data(format!("{}: {e}", p.display())))?;
    if m.config_hash != c.data_hash() && !force {
        return Err(CliError::Data(format!(
            "configHash mismatch: datasets in {} were generated with {}, this config gives {} (use --force to override)",
            dir.display(),
            m.config_hash,
            c.data_hash()
        )));
    }
    Ok(m)
}

fn train_config(c: &RunConfig) -> crate::denoiser::TrainConfig {
    crate::denoiser::TrainConfig { seed: c.master_seed, ..c.trainer.clone() }
}

pub fn cmd_train(a: &TrainArgs) -> Result<(), CliError> {
    let c = resolve_config(&a.common)?;
    let dir = data_dir(&c, &a.data);
    check_manifest(&c, &dir, a.common.force)?;
    let scenes = read_scenes(&dir.join(TRAIN_FILE)).map_err(data_err)?;
    if let Some(s) = scenes.iter().find(|s| s.size != c.benchmark.image_size) {
        return Err(CliError::Data(format!(
            "imageSize mismatch: training data has {}, config has {}",
            s.size, c.benchmark.image_size
        )));
    }
    let data: Vec<_> = scenes.into_iter().map(to_sample).collect();
    let sched = c.training_schedule().map_err(|e| CliError::Usage(e.to_string()))?;
    let tc = train_config(&c);
    eprintln!("training on {} scenes for {} epochs", data.len(), tc.epochs);
    let (model, log, start) = match &a.resume {
        Some(p) => {
            let (m, h) = checkpoint::load(p).map_err(checkpoint_err)?;
            let (m, log) = continue_training(m, h.epochs_trained, &data, &tc).map_err(train_err)?;
            (m, log, h.epochs_trained)
        }
        None => {
            let (m, log) = train_mlp(&data, &ConditionVocabulary::scene(), &sched, &tc).map_err(train_err)?;
            (m, log, 0)
        }
    };
    create_dir(&c.output_dir)?;
    let ck = c.output_dir.join(CHECKPOINT_FILE);
    checkpoint::save(&ck, &model, &c.train_hash(), start + tc.epochs).map_err(checkpoint_err)?;
    let mut curve = String::from("epoch,trainMse,probeMse\n");
    curve.push_str(&format!("{start},,{}\n", log.initial_mse));
    for e in &log.epochs {
        curve.push_str(&format!("{},{},{}\n", e.epoch, e.train_mse, e.probe_mse));
    }
    write_file(&c.output_dir.join("training_curve.csv"), curve)?;
    eprintln!("final probe mse {:.5}; wrote {}", log.final_mse(), ck.display());
    Ok(())
}

fn checkpoint_err(e: CheckpointError) -> CliError {
    CliError::Data(format!("checkpoint: {e}"))
}

fn train_err(e: TrainError) -> CliError {
    match e {
        TrainError::Diverged { .. } => CliError::Numerical(e.to_string()),
        _ => CliError::Data(e.to_string()),
    }
}

/// A loaded learned model, or none for the oracle.
pub fn load_model(c: &RunConfig, m: &ModelArgs, force: bool) -> Result<Option<MlpDenoiser>, CliError> {
    match (&m.checkpoint, m.oracle) {
        (Some(p), false) => {
            let (model, h) = checkpoint::load(p).map_err(checkpoint_err)?;
            if h.config_hash != c.train_hash() && !force {
                return Err(CliError::Data(format!(
                    "configHash mismatch: checkpoint was trained with {}, this config gives {} (use --force to override)",
                    h.config_hash,
                    c.train_hash()
                )));
            }
            if model.vocab != ConditionVocabulary::scene() {
                return Err(CliError::Data("conditionVocabulary mismatch: checkpoint is not a scene model".into()));
            }
            let dim = c.benchmark.image_size * c.benchmark.image_size * 3;
            if model.dim() != dim {
                return Err(CliError::Data(format!(
                    "imageSize mismatch: checkpoint expects dimension {}, config gives {dim}",
                    model.dim()
                )));
            }
            Ok(Some(model))
        }
        (None, true) => Ok(None),
        _ => Err(CliError::Usage("pass exactly one of --checkpoint or --oracle".into())),
    }
}

fn source<'a>(c: &RunConfig, model: &'a Option<MlpDenoiser>) -> ModelSource<'a> {
    match model {
        Some(m) => ModelSource::Shared(m),
        None => ModelSource::Oracle { class_var: ORACLE_CLASS_VAR, image_size: c.benchmark.image_size },
    }
}

fn model_name(model: &Option<MlpDenoiser>, m: &ModelArgs) -> String {
    match (model, &m.checkpoint) {
        (Some(_), Some(p)) => format!("checkpoint:{}", p.file_name().map_or_else(String::new, |f| f.to_string_lossy().into_owned())),
        _ => "oracle".to_string(),
    }
}

fn task_results(c: &RunConfig, outcomes: &[ExampleOutcome]) -> Result<Vec<TaskResult>, CliError> {
    let refs: Vec<&ExampleOutcome> = outcomes.iter().collect();
    c.benchmark.tasks.iter().map(|&t| summarize(t, &refs).map_err(CliError::from)).collect()
}

fn eval_sched(c: &RunConfig) -> Result<NoiseSchedule, CliError> {
    c.eval_schedule().map_err(|e| CliError::Usage(e.to_string()))
}

pub fn cmd_evaluate(a: &EvalArgs) -> Result<(), CliError> {
    let c = resolve_config(&a.common)?;
    let model = load_model(&c, &a.model, a.common.force)?;
    let dir = data_dir(&c, &a.data);
    let manifest = check_manifest(&c, &dir, a.common.force)?;
    let sched = eval_sched(&c)?;
    let ev = Evaluator {
        source: source(&c, &model),
        sched: &sched,
        scorer: c.estimator.scorer,
        cfg: c.estimator_config(c.master_seed),
    };
    let pool = worker_pool(c.workers)?;
    let mut examples = Vec::new();
    for &t in &c.benchmark.tasks {
        let p = dir.join(task_file(t));
        let ex = read_examples(&p).map_err(data_err)?;
        if let Some(e) = ex.iter().find(|e| e.task != t) {
            return Err(CliError::Data(format!("task mismatch: {} in {}", e.id, p.display())));
        }
        examples.extend(ex);
    }
    eprintln!("evaluating {} examples on {} workers", examples.len(), c.workers);
    let outcomes = ev.evaluate(&examples, &pool)?;
    let tasks = task_results(&c, &outcomes)?;
    let winoground = if manifest.files.iter().any(|f| f.file == PAIRS_FILE) {
        let pairs = read_pairs(&dir.join(PAIRS_FILE)).map_err(data_err)?;
        Some(ev.winoground(&pairs, &pool)?.as_pct())
    } else {
        None
    };
    let report = EvalReport {
        run_id: a.common.run_id.clone().unwrap_or_else(timestamp_run_id),
        config_hash: c.config_hash(),
        model: model_name(&model, &a.model),
        scorer: c.estimator.scorer,
        tasks,
        winoground,
        votes: None,
        ablations: None,
        jensen: jensen_summary(&outcomes),
    }
    .rounded();
    create_dir(&c.output_dir)?;
    write_file(&c.output_dir.join("report.json"), report.to_json())?;
    write_file(&c.output_dir.join("tasks.csv"), report.tasks_csv())?;
    write_file(&c.output_dir.join("bar_chart.csv"), report.bar_chart_csv())?;
    write_predictions(&c.output_dir.join("predictions.csv"), &prediction_rows(&outcomes)).map_err(data_err)?;
    if c.estimator.scorer == Scorer::SelfEval {
        write_estimates(&c.output_dir.join("estimates.jsonl"), &outcomes, &report.config_hash).map_err(data_err)?;
    }
    print_tasks(&report);
    Ok(())
}

fn print_tasks(r: &EvalReport) {
    println!("{:<18} {:>8} {:>6} {:>7} {:>8}", "task", "acc%", "std", "chance", "delta");
    for t in &r.tasks {
        println!(
            "{:<18} {:>8.2} {:>6.2} {:>7.2} {:>+8.2}",
            t.task, t.accuracy_mean_pct, t.accuracy_std_pct, t.chance_pct, t.delta_pct
        );
    }
    if let Some(w) = &r.winoground {
        println!("winoground image {:.2} text {:.2} group {:.2}", w.image_score, w.text_score, w.group_score);
    }
}

/// Scores on the two-world fixture, each image scored by its own world's model.
pub fn scale_fixture_scores(
    scorer: Scorer,
    pairs: usize,
    seed: u64,
    sched: &NoiseSchedule,
    cfg: &crate::estimator::EstimatorConfig,
    pool: &rayon::ThreadPool,
) -> Result<WinogroundScores, CliError> {
    use rayon::prelude::*;
    let f = scale_mismatch_fixture(pairs, seed);
    let bank = Estimator::bank_for(cfg, f.dim, sched);
    let [c0, c1] = ScaleMismatchFixture::captions();
    let scores: Vec<PairScores> = pool.install(|| {
        f.pairs
            .par_iter()
            .map(|p| {
                score_pair(scorer, [&p.world1, &p.world3], [&p.x_a, &p.x_b], [&c0, &c1], sched, cfg, &bank)
            })
            .collect::<Result<_, _>>()
    })
    .map_err(|e| CliError::from(EvalError::Estimate { example: "scale fixture".into(), source: e }))?;
    image_text_scores(&scores).map_err(data_err)
}

pub fn cmd_winoground(a: &WinogroundArgs) -> Result<(), CliError> {
    let c = resolve_config(&a.common)?;
    let sched = eval_sched(&c)?;
    let cfg = c.estimator_config(c.master_seed);
    let pool = worker_pool(c.workers)?;
    let (scores, model_label) = match a.fixture {
        FixtureArg::Scale => {
            (scale_fixture_scores(c.estimator.scorer, c.benchmark.winoground_pairs, c.master_seed, &sched, &cfg, &pool)?, "scale-fixture".to_string())
        }
        FixtureArg::Pairs => {
            let model = load_model(&c, &a.model, a.common.force)?;
            let dir = data_dir(&c, &a.data);
            let pairs = if dir.join(MANIFEST).exists() {
                check_manifest(&c, &dir, a.common.force)?;
                read_pairs(&dir.join(PAIRS_FILE)).map_err(data_err)?
            } else {
                build_winoground_pairs(c.benchmark.winoground_pairs, c.master_seed, c.benchmark.image_size)
                    .map_err(data_err)?
            };
            let ev = Evaluator { source: source(&c, &model), sched: &sched, scorer: c.estimator.scorer, cfg };
            (ev.winoground(&pairs, &pool)?, model_name(&model, &a.model))
        }
    };
    let report = EvalReport {
        run_id: a.common.run_id.clone().unwrap_or_else(timestamp_run_id),
        config_hash: c.config_hash(),
        model: model_label,
        scorer: c.estimator.scorer,
        tasks: Vec::new(),
        winoground: Some(scores.as_pct()),
        votes: None,
        ablations: None,
        jensen: None,
    }
    .rounded();
    create_dir(&c.output_dir)?;
    write_file(&c.output_dir.join("winoground.json"), report.to_json())?;
    print_tasks(&report);
    Ok(())
}

pub fn cmd_ablate(a: &AblateArgs) -> Result<(), CliError> {
    let base = resolve_config(&a.common)?;
    let model = load_model(&base, &a.model, a.common.force)?;
    let pool = worker_pool(base.workers)?;
    let axis = match a.axis {
        AxisArg::T => AblationAxis::T,
        AxisArg::N => AblationAxis::N,
        AxisArg::Seed => AblationAxis::Seed,
    };
    let table = ablation_sweep(axis, &a.values, |v| -> Result<Vec<TaskResult>, CliError> {
        let mut c = base.clone();
        match axis {
            AblationAxis::T => c.estimator.timesteps = v as usize,
            AblationAxis::N => c.estimator.trials = v as usize,
            AblationAxis::Seed => {
                c.master_seed = v;
                c.benchmark.repeats = 1;
            }
        }
        c.validate()?;
        let sched = eval_sched(&c)?;
        let ev = Evaluator {
            source: source(&c, &model),
            sched: &sched,
            scorer: c.estimator.scorer,
            cfg: c.estimator_config(c.master_seed),
        };
        let mut examples = Vec::new();
        for &t in &c.benchmark.tasks {
            examples.extend(generate_suites(&c, t)?);
        }
        let outcomes = ev.evaluate(&examples, &pool)?;
        eprintln!("{}={v} done", axis.name());
        task_results(&c, &outcomes)
    })?;
    create_dir(&base.output_dir)?;
    let mut json = serde_json::to_string_pretty(&table).expect("table serializes");
    json.push('\n');
    write_file(&base.output_dir.join(format!("ablation_{}.json", axis.name())), json)?;
    write_file(&base.output_dir.join(format!("ablation_{}.csv", axis.name())), table.to_csv())?;
    print!("{}", table.to_csv());
    Ok(())
}

fn read_report(dir: &Path) -> Result<EvalReport, CliError> {
    let p = dir.join("report.json");
    let text = std::fs::read_to_string(&p).map_err(|e| CliError::Data(format!("cannot read {}: {e}", p.display())))?;
    EvalReport::from_json(&text).map_err(|e| CliError::Data(format!("{}: {e}", p.display())))
}

#[derive(Debug, Serialize)]
#[serde(rename_all = "camelCase")]
struct Comparison {
    a: String,
    b: String,
    votes: Vec<TaskVotes>,
    /// Spearman ρ between the two runs' per-task accuracies.
    task_accuracy_rho: Option<f64>,
}

pub fn cmd_report(a: &ReportArgs) -> Result<(), CliError> {
    let r = read_report(&a.input)?;
    write_file(&a.input.join("tasks.csv"), r.tasks_csv())?;
    write_file(&a.input.join("bar_chart.csv"), r.bar_chart_csv())?;
    print_tasks(&r);
    let Some(other) = &a.compare else { return Ok(()) };
    let r2 = read_report(other)?;
    let pa = read_predictions(&a.input.join("predictions.csv")).map_err(data_err)?;
    let pb = read_predictions(&other.join("predictions.csv")).map_err(data_err)?;
    if pa.len() != pb.len() || pa.iter().zip(&pb).any(|(x, y)| x.example_id != y.example_id) {
        return Err(CliError::Data("runs were evaluated on different examples".into()));
    }
    let mut votes = Vec::new();
    for t in &r.tasks {
        let idx: Vec<usize> = (0..pa.len()).filter(|&i| pa[i].task == t.task).collect();
        let tally = votes_from_predictions(
            &idx.iter().map(|&i| pa[i].prediction).collect::<Vec<_>>(),
            &idx.iter().map(|&i| pb[i].prediction).collect::<Vec<_>>(),
            &idx.iter().map(|&i| pa[i].correct).collect::<Vec<_>>(),
        )?;
        println!("{:<18} onlyA {:>5} onlyB {:>5} both {:>5} neither {:>5}", t.task, tally.only_a, tally.only_b, tally.both, tally.neither);
        votes.push(TaskVotes { task: t.task.clone(), tally });
    }
    let acc = |r: &EvalReport| r.tasks.iter().map(|t| t.accuracy_mean_pct).collect::<Vec<_>>();
    let rho = spearman_rho(&acc(&r), &acc(&r2)).ok();
    if let Some(rho) = rho {
        println!("spearman rho of task accuracies: {rho:.4}");
    }
    let cmp = Comparison { a: r.run_id.clone(), b: r2.run_id.clone(), votes, task_accuracy_rho: rho };
    let mut json = serde_json::to_string_pretty(&cmp).expect("comparison serializes");
    json.push('\n');
    write_file(&a.input.join("comparison.json"), json)
}
