//! `marginlab` command line: generate, train, evaluate, compare, inspect-loss.
//!
//! Settings resolve in three layers: schema defaults, then `--config`, then
//! flags. Exit codes: 0 success, 1 usage or config error, 2 data error,
//! 3 numerical divergence.

pub mod config;

use std::ffi::OsString;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, CommandFactory, FromArgMatches, Parser, Subcommand};
use thiserror::Error;

use crate::data::{
    generate_synthetic, load_manifest, load_qrels, load_run, load_triplets, write_run, DataError,
    Manifest, QrelsTable, DEFAULT_MAX_GRADE,
};
use crate::eval::{self, EvalError};
use crate::geometry;
use crate::loss::{self, LossError, LossSpec, LossVariant, TripletBatch};
use crate::stats::{self, StatsError};
use crate::trainer::{self, EmbeddingTable, InitScheme, TableError, TrainError};

pub use config::{ConfigError, EvalMode, ExperimentConfig, InitMode, LossKind, Split};

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Data(String),
    #[error("{0}")]
    Divergence(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Divergence(_) => 3,
        }
    }
}

impl From<DataError> for CliError {
    fn from(e: DataError) -> Self {
        match e {
            DataError::InvalidSpec(_) => CliError::Usage(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<TableError> for CliError {
    fn from(e: TableError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::Geometry(_) => CliError::Divergence(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<LossError> for CliError {
    fn from(e: LossError) -> Self {
        match e {
            LossError::Geometry(_) => CliError::Divergence(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<geometry::GeometryError> for CliError {
    fn from(e: geometry::GeometryError) -> Self {
        CliError::Divergence(e.to_string())
    }
}

impl From<StatsError> for CliError {
    fn from(e: StatsError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::InvalidConfig(_) => CliError::Usage(e.to_string()),
            TrainError::Diverged { .. }
            | TrainError::Loss {
                source: LossError::Geometry(_),
                ..
            }
            | TrainError::Eval(EvalError::Geometry(_)) => CliError::Divergence(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

type Result<T> = std::result::Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(
    name = "marginlab",
    version,
    about = "Train and evaluate bi-encoder embeddings with relevance-margin losses"
)]
pub struct Cli {
    /// Flat `key = value` config file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a synthetic topic corpus.
    Generate(GenerateArgs),
    /// Train an embedding table and write checkpoint.tsv and telemetry.csv.
    Train(TrainArgs),
    /// Rank with a checkpoint and write run.txt and metrics.csv.
    Evaluate(EvaluateArgs),
    /// Paired TOST equivalence test between two runs.
    Compare(CompareArgs),
    /// Per-negative breakdown of one query's in-batch loss.
    InspectLoss(InspectArgs),
}

type Overrides = Vec<(&'static str, String)>;

fn push<T: ToString>(v: &mut Overrides, key: &'static str, value: &Option<T>) {
    if let Some(x) = value {
        v.push((key, x.to_string()));
    }
}

#[derive(Debug, Args)]
struct GenerateArgs {
    #[arg(long)]
    n_topics: Option<usize>,
    #[arg(long)]
    docs_per_topic: Option<usize>,
    #[arg(long)]
    queries_per_topic: Option<usize>,
    #[arg(long)]
    validation_queries_per_topic: Option<usize>,
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long)]
    hardness: Option<f64>,
    #[arg(long)]
    doc_noise: Option<f64>,
    #[arg(long)]
    query_noise: Option<f64>,
    #[arg(long)]
    anisotropy: Option<f64>,
    #[arg(long)]
    graded: bool,
}

impl GenerateArgs {
    fn overrides(&self) -> Overrides {
        let mut v = Vec::new();
        push(&mut v, "n_topics", &self.n_topics);
        push(&mut v, "docs_per_topic", &self.docs_per_topic);
        push(&mut v, "queries_per_topic", &self.queries_per_topic);
        push(
            &mut v,
            "validation_queries_per_topic",
            &self.validation_queries_per_topic,
        );
        push(&mut v, "dim", &self.dim);
        push(&mut v, "hardness", &self.hardness);
        push(&mut v, "doc_noise", &self.doc_noise);
        push(&mut v, "query_noise", &self.query_noise);
        push(&mut v, "anisotropy", &self.anisotropy);
        if self.graded {
            v.push(("graded", "true".into()));
        }
        v
    }
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[arg(long)]
    data_dir: Option<PathBuf>,
    /// features | gaussian
    #[arg(long)]
    init: Option<String>,
    /// static | adaptive | distributed
    #[arg(long)]
    loss: Option<String>,
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long, conflicts_with = "no_in_batch")]
    in_batch: bool,
    #[arg(long)]
    no_in_batch: bool,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    weight_decay: Option<f64>,
    #[arg(long)]
    lr_gamma: Option<f64>,
    #[arg(long)]
    eval_every: Option<usize>,
    #[arg(long)]
    patience: Option<usize>,
    #[arg(long)]
    max_epochs: Option<usize>,
    #[arg(long)]
    max_steps: Option<usize>,
}

impl TrainArgs {
    fn overrides(&self) -> Overrides {
        let mut v = Vec::new();
        push(
            &mut v,
            "data_dir",
            &self.data_dir.as_ref().map(|p| p.display()),
        );
        push(&mut v, "init", &self.init);
        push(&mut v, "loss", &self.loss);
        push(&mut v, "epsilon", &self.epsilon);
        if self.in_batch {
            v.push(("in_batch", "true".into()));
        }
        if self.no_in_batch {
            v.push(("in_batch", "false".into()));
        }
        push(&mut v, "batch_size", &self.batch_size);
        push(&mut v, "lr", &self.lr);
        push(&mut v, "weight_decay", &self.weight_decay);
        push(&mut v, "lr_gamma", &self.lr_gamma);
        push(&mut v, "eval_every", &self.eval_every);
        push(&mut v, "patience", &self.patience);
        push(&mut v, "max_epochs", &self.max_epochs);
        push(&mut v, "max_steps", &self.max_steps);
        v
    }
}

#[derive(Debug, Args)]
struct EvaluateArgs {
    #[arg(long)]
    data_dir: Option<PathBuf>,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// full | rerank
    #[arg(long)]
    mode: Option<String>,
    /// Baseline run for rerank mode.
    #[arg(long)]
    run: Option<PathBuf>,
    #[arg(long)]
    depth: Option<usize>,
    #[arg(long)]
    k: Option<usize>,
    /// validation | train | all
    #[arg(long)]
    split: Option<String>,
    /// Repeatable, e.g. `--metric ndcg@10 --metric recall@1000`.
    #[arg(long)]
    metric: Vec<String>,
    #[arg(long)]
    binarize_threshold: Option<u32>,
}

impl EvaluateArgs {
    fn overrides(&self) -> Overrides {
        let mut v = Vec::new();
        push(
            &mut v,
            "data_dir",
            &self.data_dir.as_ref().map(|p| p.display()),
        );
        push(
            &mut v,
            "checkpoint",
            &self.checkpoint.as_ref().map(|p| p.display()),
        );
        push(&mut v, "mode", &self.mode);
        push(&mut v, "run", &self.run.as_ref().map(|p| p.display()));
        push(&mut v, "depth", &self.depth);
        push(&mut v, "k", &self.k);
        push(&mut v, "split", &self.split);
        if !self.metric.is_empty() {
            v.push(("metrics", self.metric.join(",")));
        }
        push(&mut v, "binarize_threshold", &self.binarize_threshold);
        v
    }
}

#[derive(Debug, Args)]
struct CompareArgs {
    #[arg(long)]
    run_a: Option<PathBuf>,
    #[arg(long)]
    run_b: Option<PathBuf>,
    #[arg(long)]
    qrels: Option<PathBuf>,
    /// Repeatable; every metric joins the same Bonferroni family.
    #[arg(long)]
    metric: Vec<String>,
    #[arg(long)]
    epsilon_l: Option<f64>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    family: Option<usize>,
    #[arg(long)]
    binarize_threshold: Option<u32>,
}

impl CompareArgs {
    fn overrides(&self) -> Overrides {
        let mut v = Vec::new();
        push(&mut v, "run_a", &self.run_a.as_ref().map(|p| p.display()));
        push(&mut v, "run_b", &self.run_b.as_ref().map(|p| p.display()));
        push(&mut v, "qrels", &self.qrels.as_ref().map(|p| p.display()));
        if !self.metric.is_empty() {
            v.push(("metric", self.metric.join(",")));
        }
        push(&mut v, "epsilon_l", &self.epsilon_l);
        push(&mut v, "alpha", &self.alpha);
        push(&mut v, "family", &self.family);
        push(&mut v, "binarize_threshold", &self.binarize_threshold);
        v
    }
}

#[derive(Debug, Args)]
struct InspectArgs {
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    triplets: Option<PathBuf>,
    #[arg(long)]
    query: Option<String>,
    /// static | adaptive | distributed
    #[arg(long)]
    loss: Option<String>,
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
}

impl InspectArgs {
    fn overrides(&self) -> Overrides {
        let mut v = Vec::new();
        push(
            &mut v,
            "checkpoint",
            &self.checkpoint.as_ref().map(|p| p.display()),
        );
        push(
            &mut v,
            "triplets",
            &self.triplets.as_ref().map(|p| p.display()),
        );
        push(&mut v, "query", &self.query);
        push(&mut v, "loss", &self.loss);
        push(&mut v, "epsilon", &self.epsilon);
        push(&mut v, "batch_size", &self.batch_size);
        v
    }
}

fn command() -> clap::Command {
    let help = config::schema_help();
    let mut cmd = Cli::command();
    for name in ["generate", "train", "evaluate", "compare", "inspect-loss"] {
        cmd = cmd.mut_subcommand(name, |s| s.after_help(help.clone()));
    }
    cmd
}

/// Parses `args` (program name first), runs the subcommand and returns the
/// process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match command()
        .try_get_matches_from(args)
        .and_then(|m| Cli::from_arg_matches(&m))
    {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    let mut stdout = std::io::stdout().lock();
    match execute(&cli, &mut stdout) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn resolve(cli: &Cli) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::default();
    if let Some(path) = &cli.config {
        cfg.apply_file(path)?;
    }
    let mut overrides = Vec::new();
    push(&mut overrides, "seed", &cli.seed);
    push(
        &mut overrides,
        "out",
        &cli.out.as_ref().map(|p| p.display()),
    );
    overrides.extend(match &cli.command {
        Command::Generate(a) => a.overrides(),
        Command::Train(a) => a.overrides(),
        Command::Evaluate(a) => a.overrides(),
        Command::Compare(a) => a.overrides(),
        Command::InspectLoss(a) => a.overrides(),
    });
    for (k, v) in overrides {
        cfg.set(k, &v)?;
    }
    Ok(cfg)
}

fn execute(cli: &Cli, stdout: &mut dyn Write) -> Result<()> {
    let cfg = resolve(cli)?;
    match &cli.command {
        Command::Generate(_) => cmd_generate(&cfg, stdout),
        Command::Train(_) => cmd_train(&cfg, stdout),
        Command::Evaluate(_) => cmd_evaluate(&cfg, stdout),
        Command::Compare(_) => cmd_compare(&cfg, stdout),
        Command::InspectLoss(_) => cmd_inspect_loss(&cfg, stdout),
    }
}

fn io_error(path: &Path, e: std::io::Error) -> CliError {
    CliError::Data(format!("{}: {e}", path.display()))
}

fn write_file(
    path: &Path,
    body: impl FnOnce(&mut BufWriter<File>) -> std::io::Result<()>,
) -> Result<()> {
    let mut w = File::create(path)
        .map(BufWriter::new)
        .map_err(|e| io_error(path, e))?;
    body(&mut w)
        .and_then(|_| w.flush())
        .map_err(|e| io_error(path, e))
}

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| io_error(dir, e))
}

fn required<'a, T>(value: &'a Option<T>, key: &'static str) -> Result<&'a T> {
    value
        .as_ref()
        .ok_or(CliError::Config(ConfigError::Missing(key)))
}

fn out_write(stdout: &mut dyn Write, text: std::fmt::Arguments<'_>) -> Result<()> {
    match stdout.write_fmt(text) {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => {
            Err(CliError::Data(format!("stdout: {e}")))
        }
        _ => Ok(()),
    }
}

pub fn cmd_generate(cfg: &ExperimentConfig, stdout: &mut dyn Write) -> Result<()> {
    let corpus = generate_synthetic(&cfg.synthetic)?;
    corpus.write_to_dir(&cfg.out)?;
    out_write(
        stdout,
        format_args!(
            "wrote {} triplets, {} train and {} validation queries, {} documents to {}\n",
            corpus.triplets.len(),
            corpus.manifest.train.len(),
            corpus.manifest.validation.len(),
            corpus.manifest.docs.len(),
            cfg.out.display()
        ),
    )
}

struct DataDir {
    manifest: Manifest,
    qrels: QrelsTable,
}

fn load_data_dir(dir: &Path) -> Result<DataDir> {
    Ok(DataDir {
        manifest: load_manifest(&dir.join("manifest.tsv"))?,
        qrels: load_qrels(&dir.join("qrels.txt"), DEFAULT_MAX_GRADE)?,
    })
}

pub fn cmd_train(cfg: &ExperimentConfig, stdout: &mut dyn Write) -> Result<()> {
    let spec = cfg.loss_spec()?;
    cfg.train.validate()?;
    let dataset = load_triplets(&cfg.data_dir.join("triplets.tsv"))?;
    let data = load_data_dir(&cfg.data_dir)?;
    let features = EmbeddingTable::load(&cfg.data_dir.join("features.tsv"))?;
    let table = match cfg.init {
        InitMode::Features => features,
        InitMode::Gaussian => {
            let ids: Vec<&str> = features.ids().collect();
            EmbeddingTable::init(&ids, cfg.synthetic.dim, cfg.seed, InitScheme::default())?
        }
    };

    let validation = &data.manifest.validation;
    let docs = &data.manifest.docs;
    let val_qrels = data.qrels.restrict(validation);
    let mut hook = |t: &EmbeddingTable| eval::full_rank_ndcg(t, &val_qrels, validation, docs, 10);
    let hook: Option<&mut trainer::EvalHook<'_>> = if validation.is_empty() {
        None
    } else {
        Some(&mut hook)
    };

    ensure_dir(&cfg.out)?;
    let telemetry_path = cfg.out.join("telemetry.csv");
    let outcome = match trainer::train(&cfg.train, &spec, &dataset, table, hook) {
        Ok(o) => o,
        Err(TrainError::Diverged {
            record,
            mut telemetry,
        }) => {
            telemetry.push(record.clone());
            write_file(&telemetry_path, |w| {
                trainer::write_telemetry_csv(&telemetry, w)
            })?;
            return Err(CliError::Divergence(format!(
                "loss diverged at step {} (loss = {})",
                record.step, record.loss
            )));
        }
        Err(e) => return Err(e.into()),
    };
    outcome.table.save(&cfg.out.join("checkpoint.tsv"))?;
    write_file(&telemetry_path, |w| {
        trainer::write_telemetry_csv(&outcome.telemetry, w)
    })?;
    let best = match (outcome.best_step, outcome.best_metric) {
        (Some(s), Some(m)) => format!("best validation ndcg@10 {m:.4} at step {s}"),
        _ => "no validation queries".to_string(),
    };
    out_write(
        stdout,
        format_args!(
            "{spec}: {} steps ({:?}), {best}\n",
            outcome.steps, outcome.stop_reason
        ),
    )
}

fn split_queries(manifest: &Manifest, split: Split) -> Vec<String> {
    match split {
        Split::Validation => manifest.validation.clone(),
        Split::Train => manifest.train.clone(),
        Split::All => manifest
            .train
            .iter()
            .chain(&manifest.validation)
            .cloned()
            .collect(),
    }
}

pub fn cmd_evaluate(cfg: &ExperimentConfig, stdout: &mut dyn Write) -> Result<()> {
    let specs = cfg.evaluate_metrics()?;
    let table = EmbeddingTable::load(required(&cfg.checkpoint, "checkpoint")?)?;
    let data = load_data_dir(&cfg.data_dir)?;
    let queries = split_queries(&data.manifest, cfg.split);
    let qrels = data.qrels.restrict(&queries);
    let run = match cfg.mode {
        EvalMode::Full => eval::full_rank(&table, &queries, &data.manifest.docs, cfg.k)?,
        EvalMode::Rerank => {
            let baseline = load_run(required(&cfg.run, "run")?)?;
            eval::rerank(&baseline, &table, cfg.depth)?
        }
    };
    let evaluation = eval::evaluate_run(&run, &qrels, &specs)?;

    ensure_dir(&cfg.out)?;
    write_file(&cfg.out.join("run.txt"), |w| write_run(&run, w))?;
    write_file(&cfg.out.join("metrics.csv"), |w| {
        eval::write_evaluation_csv(&evaluation, w)
    })?;
    for m in &evaluation.metrics {
        out_write(
            stdout,
            format_args!(
                "{}\t{:.4}\t({} queries)\n",
                m.spec,
                m.mean,
                m.per_query.len()
            ),
        )?;
    }
    Ok(())
}

/// File stems name the two systems unless they collide, as with two
/// `run.txt` files from different output directories.
fn system_names(a: &Path, b: &Path) -> (String, String) {
    let stem = |p: &Path| p.file_stem().map(|s| s.to_string_lossy().into_owned());
    match (stem(a), stem(b)) {
        (Some(x), Some(y)) if x != y => (x, y),
        _ => (a.display().to_string(), b.display().to_string()),
    }
}

pub fn cmd_compare(cfg: &ExperimentConfig, stdout: &mut dyn Write) -> Result<()> {
    let specs = cfg.compare_metrics()?;
    if cfg.family < specs.len() {
        return Err(CliError::Usage(format!(
            "family size {} is smaller than the {} metrics compared",
            cfg.family,
            specs.len()
        )));
    }
    let path_a = required(&cfg.run_a, "run_a")?;
    let path_b = required(&cfg.run_b, "run_b")?;
    let qrels = load_qrels(required(&cfg.qrels, "qrels")?, DEFAULT_MAX_GRADE)?;
    let run_a = load_run(path_a)?;
    let run_b = load_run(path_b)?;
    for (path, run) in [(path_a, &run_a), (path_b, &run_b)] {
        let missing: Vec<&str> = qrels
            .queries()
            .filter(|q| run.ranking(q).is_none())
            .collect();
        if !missing.is_empty() {
            return Err(CliError::Data(format!(
                "{} does not cover {} judged queries: {}",
                path.display(),
                missing.len(),
                missing.join(", ")
            )));
        }
    }

    let eval_a = eval::evaluate_run(&run_a, &qrels, &specs)?;
    let eval_b = eval::evaluate_run(&run_b, &qrels, &specs)?;
    let mut tests = Vec::with_capacity(specs.len());
    let mut per_query = Vec::new();
    for (ma, mb) in eval_a.metrics.iter().zip(&eval_b.metrics) {
        let x: Vec<f64> = ma.per_query.iter().map(|(_, s)| *s).collect();
        let y: Vec<f64> = mb.per_query.iter().map(|(_, s)| *s).collect();
        for ((q, a), (_, b)) in ma.per_query.iter().zip(&mb.per_query) {
            per_query.push((q.clone(), ma.spec, *a, *b));
        }
        tests.push((
            ma.spec,
            stats::paired_tost(&x, &y, cfg.epsilon_l, cfg.alpha)?,
        ));
    }
    let p: Vec<f64> = tests.iter().map(|(_, r)| r.p_tost).collect();
    let adjusted = stats::bonferroni(&p, cfg.family)?;

    let (a, b) = system_names(path_a, path_b);
    ensure_dir(&cfg.out)?;
    write_file(&cfg.out.join("compare.csv"), |w| {
        writeln!(
            w,
            "system_a,system_b,metric,n,mean_diff,p_tost,p_adjusted,equivalent"
        )?;
        for ((spec, r), adj) in tests.iter().zip(&adjusted) {
            writeln!(
                w,
                "{a},{b},{spec},{},{},{},{adj},{}",
                r.n,
                r.mean_diff,
                r.p_tost,
                *adj < cfg.alpha
            )?;
        }
        Ok(())
    })?;
    write_file(&cfg.out.join("per_query.csv"), |w| {
        writeln!(w, "query_id,metric,score_a,score_b")?;
        for (q, spec, sa, sb) in &per_query {
            writeln!(w, "{q},{spec},{sa},{sb}")?;
        }
        Ok(())
    })?;
    for ((spec, r), adj) in tests.iter().zip(&adjusted) {
        out_write(
            stdout,
            format_args!(
                "{spec}: n={} mean_diff={:.4} p_adjusted={:.4} {}\n",
                r.n,
                r.mean_diff,
                adj,
                if *adj < cfg.alpha {
                    "equivalent"
                } else {
                    "not equivalent"
                }
            ),
        )?;
    }
    Ok(())
}

/// One printed row of `inspect-loss`.
#[derive(Debug, Clone, PartialEq)]
pub struct InspectRow {
    pub negative: String,
    pub rho_pos: f64,
    pub rho_neg: f64,
    pub target: f64,
    pub loss_sq: f64,
    pub mark: &'static str,
}

/// The loss instances of the first batch containing `query`, sorted by
/// target descending. Static and adaptive losses are evaluated in their
/// in-batch form so every negative of the batch gets a row.
pub fn inspect_rows(
    table: &EmbeddingTable,
    dataset: &crate::data::TripletDataset,
    spec: LossSpec,
    batch_size: usize,
    query: &str,
) -> Result<Vec<InspectRow>> {
    let spec = spec.with_in_batch();
    let position = dataset
        .iter()
        .position(|t| t.query == query)
        .ok_or_else(|| CliError::Data(format!("query `{query}` does not occur in the triplets")))?;
    let batch_size = batch_size.max(1);
    let start = position / batch_size * batch_size;
    let chunk = &dataset.triples()[start..(start + batch_size).min(dataset.len())];
    let row = |id: &str| {
        table
            .get(id)
            .map(<[f64]>::to_vec)
            .ok_or_else(|| CliError::Data(format!("id `{id}` is not in the checkpoint")))
    };
    let gather = |f: fn(&crate::data::Triple) -> &str| {
        chunk.iter().map(|t| row(f(t))).collect::<Result<Vec<_>>>()
    };
    let batch = TripletBatch::new(
        gather(|t| &t.query)?,
        gather(|t| &t.positive)?,
        gather(|t| &t.negative)?,
    )?;
    let report = loss::batch_loss(&spec, &batch)?;

    let i = position - start;
    let q = &batch.queries[i];
    let rho_pos = geometry::cosine(q, &batch.positives[i])?;
    let mut rows = report
        .instances
        .iter()
        .filter(|inst| inst.i == i)
        .map(|inst| {
            let margin_neg = match spec.variant() {
                LossVariant::Distributed => i,
                _ => inst.j,
            };
            Ok(InspectRow {
                negative: chunk[inst.j].negative.clone(),
                rho_pos,
                rho_neg: geometry::cosine(q, &batch.negatives[margin_neg])?,
                target: inst.target,
                loss_sq: inst.squared,
                mark: "",
            })
        })
        .collect::<Result<Vec<_>>>()?;
    rows.sort_by(|a, b| b.target.total_cmp(&a.target));
    let n = rows.len();
    if n > 2 {
        rows[(n - 1) / 2].mark = "mid";
    }
    if n > 1 {
        rows[n - 1].mark = "min";
    }
    rows[0].mark = "max";
    Ok(rows)
}

pub fn cmd_inspect_loss(cfg: &ExperimentConfig, stdout: &mut dyn Write) -> Result<()> {
    let spec = cfg.loss_spec()?;
    let table = EmbeddingTable::load(required(&cfg.checkpoint, "checkpoint")?)?;
    let dataset = load_triplets(required(&cfg.triplets, "triplets")?)?;
    let query = required(&cfg.query, "query")?;
    let rows = inspect_rows(&table, &dataset, spec, cfg.train.batch_size, query)?;
    out_write(
        stdout,
        format_args!("negative\trho_pos\trho_neg\ttarget\tloss_sq\tmark\n"),
    )?;
    for r in rows {
        out_write(
            stdout,
            format_args!(
                "{}\t{}\t{}\t{}\t{}\t{}\n",
                r.negative, r.rho_pos, r.rho_neg, r.target, r.loss_sq, r.mark
            ),
        )?;
    }
    Ok(())
}
