//! Command-line pipeline: generate, train, evaluate, compare, attribute and
//! roc-export, handing artifacts over through files.
//!
//! Every command writes `manifest.json` next to its outputs with the
//! arguments, resolved configuration, seeds and sha256 hashes of inputs and
//! artifacts.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::attribution::{self, AttributionConfig, Background};
use crate::baselines::{self, BaselineConfig, BaselineKind};
use crate::datamodel::{
    self, ClassSummary, Dataset, Lookback, Split, SplitSpec, DEFAULT_HORIZON_DAYS,
};
use crate::error::{Error, Result};
use crate::metrics::{self, Evaluation, ThresholdRule};
use crate::synthgen::{self, Scenario};
use crate::trainer::{self, EnsembleModel, InputScaling, TrainConfig};

pub const THREADS_ENV: &str = "TOUCHNET_THREADS";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const MODEL_FILE: &str = "ensemble.json";
pub const METRICS_FILE: &str = "metrics.json";
pub const COMPARISON_FILE: &str = "comparison.csv";
pub const ROC_FILE: &str = "roc.csv";
pub const BEESWARM_FILE: &str = "beeswarm.csv";
pub const IMPORTANCE_FILE: &str = "importance.csv";
pub const SHAPLEY_FILE: &str = "shapley.json";

#[derive(Debug, Parser)]
#[command(
    name = "touchnet",
    version,
    about = "Purchase prediction from touchpoint counts"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic population with planted ground truth.
    Generate(GenerateArgs),
    /// Train an ensemble and select its threshold on the validation split.
    Train(TrainArgs),
    /// Re-evaluate a trained ensemble on its test split.
    Evaluate(ModelArgs),
    /// Compare the ensemble against baseline classifiers.
    Compare(CompareArgs),
    /// Shapley attribution of test-split scores to touchpoint types.
    Attribute(AttributeArgs),
    /// Export the test-split ROC curve.
    RocExport(ModelArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Profile {
    /// 500 epochs, 5 members.
    Desk,
    /// 10000 epochs, 10 members.
    Paper,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum RuleArg {
    Arithmetic,
    Geometric,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ScalingArg {
    Log1p,
    Identity,
}

#[derive(Debug, Args, Serialize)]
struct GenerateArgs {
    #[arg(long, default_value_t = datamodel::REFERENCE_USERS)]
    users: usize,
    #[arg(long, default_value_t = 40.0)]
    months: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "reference", value_parser = parse_scenario)]
    scenario: Scenario,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value = "full", value_parser = parse_lookback)]
    lookback: Lookback,
    /// Defaults to the horizon in groundtruth.json, else 1216 days.
    #[arg(long)]
    horizon_days: Option<u32>,
    #[arg(long, value_enum, default_value = "desk")]
    profile: Profile,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    members: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long, value_enum, default_value = "arithmetic")]
    #[serde(skip)]
    rule: RuleArg,
    #[arg(long, value_enum, default_value = "log1p")]
    #[serde(skip)]
    scaling: ScalingArg,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
struct ModelArgs {
    #[arg(long)]
    data: PathBuf,
    /// Directory holding ensemble.json.
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
struct CompareArgs {
    #[command(flatten)]
    #[serde(flatten)]
    common: ModelArgs,
    #[arg(long, default_value = "logistic,nb,knn", value_delimiter = ',', value_parser = parse_baseline)]
    baselines: Vec<BaselineKind>,
    #[arg(long, default_value_t = 5)]
    knn_k: usize,
    /// Gaussian naive Bayes on log1p counts.
    #[arg(long)]
    nb_log1p: bool,
    /// Logistic L2 penalty; defaults to 1/n_train.
    #[arg(long)]
    l2: Option<f64>,
}

#[derive(Debug, Args, Serialize)]
struct AttributeArgs {
    #[command(flatten)]
    #[serde(flatten)]
    common: ModelArgs,
    #[arg(long, default_value_t = attribution::DEFAULT_BACKGROUND_SIZE)]
    background: usize,
    #[arg(long, default_value_t = attribution::DEFAULT_N_PERM)]
    n_perm: usize,
    /// Attribute only the first N test examples.
    #[arg(long)]
    max_users: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn parse_lookback(s: &str) -> std::result::Result<Lookback, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_scenario(s: &str) -> std::result::Result<Scenario, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_baseline(s: &str) -> std::result::Result<BaselineKind, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

/// How the training pairs and splits were built from the raw records.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataSpec {
    pub lookback_days: u32,
    pub horizon_days: u32,
    pub seed: u64,
    pub split: SplitSpec,
}

impl DataSpec {
    pub fn prepare(&self, records: &[datamodel::UserRecord]) -> Result<Split> {
        let pairs = datamodel::build_pairs(
            records,
            i64::from(self.lookback_days),
            self.horizon_days,
            self.seed,
        )?;
        datamodel::split(&pairs, &self.split)
    }
}

/// Contents of `ensemble.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelArtifact {
    pub data: DataSpec,
    pub ensemble: EnsembleModel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemberSummary {
    pub init_seed: u64,
    pub best_epoch: usize,
    pub best_val_auroc: f64,
}

/// Contents of `metrics.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub lookback_days: u32,
    pub horizon_days: u32,
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
    pub test_classes: ClassSummary,
    pub threshold_rule: ThresholdRule,
    pub val_auroc: f64,
    /// Test-split evaluation at the ensemble threshold.
    #[serde(flatten)]
    pub test: Evaluation,
    pub members: Vec<MemberSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub argv: Vec<String>,
    pub config: serde_json::Value,
    pub seeds: Vec<u64>,
    pub inputs: BTreeMap<String, String>,
    pub artifacts: BTreeMap<String, String>,
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path)?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut out = BufWriter::new(fs::File::create(path)?);
    serde_json::to_writer_pretty(&mut out, value)?;
    writeln!(out)?;
    out.flush()?;
    Ok(())
}

pub fn read_model(dir: &Path) -> Result<ModelArtifact> {
    let path = dir.join(MODEL_FILE);
    let file = fs::File::open(&path)
        .map_err(|e| Error::Validation(format!("cannot open model {}: {e}", path.display())))?;
    Ok(serde_json::from_reader(std::io::BufReader::new(file))?)
}

pub fn read_manifest(dir: &Path) -> Result<Manifest> {
    let file = fs::File::open(dir.join(MANIFEST_FILE))?;
    Ok(serde_json::from_reader(std::io::BufReader::new(file))?)
}

struct RunContext {
    command: &'static str,
    argv: Vec<String>,
    out: PathBuf,
    inputs: Vec<PathBuf>,
    artifacts: Vec<&'static str>,
}

impl RunContext {
    fn finish(self, config: serde_json::Value, seeds: Vec<u64>) -> Result<()> {
        let mut inputs = BTreeMap::new();
        for p in &self.inputs {
            inputs.insert(p.display().to_string(), sha256_file(p)?);
        }
        let mut artifacts = BTreeMap::new();
        for name in &self.artifacts {
            artifacts.insert((*name).to_string(), sha256_file(&self.out.join(name))?);
        }
        let manifest = Manifest {
            tool: env!("CARGO_PKG_NAME").into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command: self.command.into(),
            argv: self.argv,
            config,
            seeds,
            inputs,
            artifacts,
        };
        write_json(&self.out.join(MANIFEST_FILE), &manifest)
    }
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| {
        Error::Validation(format!(
            "cannot create output directory {}: {e}",
            dir.display()
        ))
    })
}

fn require_data_dir(dir: &Path) -> Result<Vec<PathBuf>> {
    let files = vec![
        dir.join(datamodel::EVENTS_FILE),
        dir.join(datamodel::PURCHASES_FILE),
    ];
    if let Some(missing) = files.iter().find(|p| !p.is_file()) {
        return Err(Error::Validation(format!(
            "missing input file {}",
            missing.display()
        )));
    }
    Ok(files)
}

/// Parses `argv` (including the program name) and runs the command.
/// Returns the process exit code: 0 on success, 1 on failure and 2 on a
/// usage error.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let argv: Vec<OsString> = argv.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    configure_threads();
    let recorded: Vec<String> = argv
        .iter()
        .skip(1)
        .map(|a| a.to_string_lossy().into_owned())
        .collect();
    match execute(cli.command, recorded) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

fn configure_threads() {
    if let Some(n) = std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
    {
        // Fails harmlessly when the global pool already exists.
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global();
    }
}

fn execute(command: Command, argv: Vec<String>) -> Result<()> {
    match command {
        Command::Generate(a) => generate(a, argv),
        Command::Train(a) => train(a, argv),
        Command::Evaluate(a) => evaluate(a, argv),
        Command::Compare(a) => compare(a, argv),
        Command::Attribute(a) => attribute(a, argv),
        Command::RocExport(a) => roc_export(a, argv),
    }
}

fn to_value<T: Serialize>(v: &T) -> Result<serde_json::Value> {
    Ok(serde_json::to_value(v)?)
}

fn generate(args: GenerateArgs, argv: Vec<String>) -> Result<()> {
    if !(args.months.is_finite() && args.months > 0.0) {
        return Err(Error::Validation(format!(
            "months must be positive, got {}",
            args.months
        )));
    }
    let config = args.scenario.config(args.users, args.months, args.seed);
    config.validate()?;
    let (records, truth) = synthgen::generate(&config)?;
    ensure_dir(&args.out)?;
    synthgen::write_population(&args.out, &records, &truth)?;
    RunContext {
        command: "generate",
        argv,
        out: args.out.clone(),
        inputs: vec![],
        artifacts: vec![
            datamodel::EVENTS_FILE,
            datamodel::PURCHASES_FILE,
            synthgen::GROUND_TRUTH_FILE,
        ],
    }
    .finish(
        serde_json::json!({ "args": to_value(&args)?, "generator": to_value(&config)? }),
        vec![args.seed],
    )
}

fn resolve_horizon(data: &Path, explicit: Option<u32>) -> Result<u32> {
    if let Some(h) = explicit {
        return Ok(h);
    }
    if data.join(synthgen::GROUND_TRUTH_FILE).is_file() {
        return Ok(synthgen::read_ground_truth(data)?.horizon_days);
    }
    Ok(DEFAULT_HORIZON_DAYS)
}

fn metrics_report(artifact: &ModelArtifact, split: &Split) -> Result<MetricsReport> {
    let ensemble = &artifact.ensemble;
    let test_scores = ensemble.scores(&split.test);
    let test_labels = split.test.labels();
    let test = metrics::evaluate(&test_scores, &test_labels, ensemble.threshold)?;
    let val_auroc = metrics::auroc_of(&ensemble.scores(&split.val), &split.val.labels())?;
    Ok(MetricsReport {
        lookback_days: artifact.data.lookback_days,
        horizon_days: artifact.data.horizon_days,
        n_train: split.train.len(),
        n_val: split.val.len(),
        n_test: split.test.len(),
        test_classes: datamodel::class_summary(&split.test)?,
        threshold_rule: ensemble.config.threshold_rule,
        val_auroc,
        test,
        members: ensemble
            .members
            .iter()
            .map(|m| MemberSummary {
                init_seed: m.init_seed,
                best_epoch: m.best_epoch,
                best_val_auroc: m.best_val_auroc,
            })
            .collect(),
    })
}

fn train(args: TrainArgs, argv: Vec<String>) -> Result<()> {
    let inputs = require_data_dir(&args.data)?;
    let horizon_days = resolve_horizon(&args.data, args.horizon_days)?;
    let records = datamodel::load_dir(&args.data)?;
    let data = DataSpec {
        lookback_days: args.lookback.days(horizon_days),
        horizon_days,
        seed: args.seed,
        split: SplitSpec::new(args.seed),
    };
    let split = data.prepare(&records)?;

    let mut config = match args.profile {
        Profile::Desk => TrainConfig::desk(args.seed),
        Profile::Paper => TrainConfig::paper(args.seed),
    };
    if let Some(e) = args.epochs {
        config.epochs = e;
    }
    if let Some(k) = args.members {
        config.seeds = (0..k as u64)
            .map(|i| crate::seeding::derive(args.seed, &[i]))
            .collect();
    }
    config.batch_size = args.batch_size;
    config.threshold_rule = match args.rule {
        RuleArg::Arithmetic => ThresholdRule::BalancedArithmetic,
        RuleArg::Geometric => ThresholdRule::BalancedGeometric,
    };
    config.input_scaling = match args.scaling {
        ScalingArg::Log1p => InputScaling::Log1pStandardize,
        ScalingArg::Identity => InputScaling::Identity,
    };
    config.validate()?;

    let ensemble = trainer::train_ensemble(&split.train, &split.val, &config)?;
    let artifact = ModelArtifact { data, ensemble };
    let report = metrics_report(&artifact, &split)?;

    ensure_dir(&args.out)?;
    write_json(&args.out.join(MODEL_FILE), &artifact)?;
    write_json(&args.out.join(METRICS_FILE), &report)?;
    let mut seeds = vec![args.seed];
    seeds.extend(&config.seeds);
    RunContext {
        command: "train",
        argv,
        out: args.out.clone(),
        inputs,
        artifacts: vec![MODEL_FILE, METRICS_FILE],
    }
    .finish(
        serde_json::json!({
            "args": to_value(&args)?,
            "data": to_value(&artifact.data)?,
            "train": to_value(&config)?,
        }),
        seeds,
    )
}

struct Loaded {
    inputs: Vec<PathBuf>,
    artifact: ModelArtifact,
    split: Split,
}

fn load_model_and_data(args: &ModelArgs) -> Result<Loaded> {
    let mut inputs = require_data_dir(&args.data)?;
    let artifact = read_model(&args.model)?;
    inputs.push(args.model.join(MODEL_FILE));
    let records = datamodel::load_dir(&args.data)?;
    let split = artifact.data.prepare(&records)?;
    Ok(Loaded {
        inputs,
        artifact,
        split,
    })
}

fn evaluate(args: ModelArgs, argv: Vec<String>) -> Result<()> {
    let loaded = load_model_and_data(&args)?;
    let report = metrics_report(&loaded.artifact, &loaded.split)?;
    ensure_dir(&args.out)?;
    write_json(&args.out.join(METRICS_FILE), &report)?;
    RunContext {
        command: "evaluate",
        argv,
        out: args.out.clone(),
        inputs: loaded.inputs,
        artifacts: vec![METRICS_FILE],
    }
    .finish(
        serde_json::json!({ "args": to_value(&args)?, "data": to_value(&loaded.artifact.data)? }),
        vec![loaded.artifact.data.seed],
    )
}

fn compare(args: CompareArgs, argv: Vec<String>) -> Result<()> {
    let loaded = load_model_and_data(&args.common)?;
    let config = BaselineConfig {
        logistic_l2: args.l2,
        nb_log1p: args.nb_log1p,
        knn_k: args.knn_k,
        ..BaselineConfig::default()
    };
    let models = args
        .baselines
        .iter()
        .map(|&k| baselines::fit(k, &loaded.split.train, &config))
        .collect::<Result<Vec<_>>>()?;
    let rows = baselines::compare(
        &models,
        &loaded.artifact.ensemble,
        &loaded.split.val,
        &loaded.split.test,
    )?;
    let out = &args.common.out;
    ensure_dir(out)?;
    baselines::write_comparison_csv(&out.join(COMPARISON_FILE), &rows)?;
    write_json(&out.join("comparison.json"), &rows)?;
    RunContext {
        command: "compare",
        argv,
        out: out.clone(),
        inputs: loaded.inputs,
        artifacts: vec![COMPARISON_FILE, "comparison.json"],
    }
    .finish(
        serde_json::json!({
            "args": to_value(&args)?,
            "data": to_value(&loaded.artifact.data)?,
            "baselines": to_value(&config)?,
        }),
        vec![loaded.artifact.data.seed],
    )
}

fn head(data: &Dataset, n: Option<usize>) -> Dataset {
    let take = n.unwrap_or(data.len()).min(data.len());
    Dataset {
        examples: data.examples[..take].to_vec(),
        lookback_days: data.lookback_days,
    }
}

fn attribute(args: AttributeArgs, argv: Vec<String>) -> Result<()> {
    let loaded = load_model_and_data(&args.common)?;
    let config = AttributionConfig {
        background_size: args.background,
        n_perm: args.n_perm,
        seed: args.seed,
    };
    let background = Background::sample(
        &loaded.split.train,
        config.background_size,
        crate::seeding::derive(config.seed, &[u64::MAX]),
    )?;
    let targets = head(&loaded.split.test, args.max_users);
    if targets.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let matrix =
        attribution::attribute_dataset(&loaded.artifact.ensemble, &targets, &background, &config)?;
    let ranking = attribution::rank_features(&matrix)?;

    let out = &args.common.out;
    ensure_dir(out)?;
    attribution::export_beeswarm(&matrix, &targets, &out.join(BEESWARM_FILE))?;
    attribution::write_importance(&out.join(IMPORTANCE_FILE), &ranking)?;
    write_json(&out.join(SHAPLEY_FILE), &matrix)?;
    RunContext {
        command: "attribute",
        argv,
        out: out.clone(),
        inputs: loaded.inputs,
        artifacts: vec![BEESWARM_FILE, IMPORTANCE_FILE, SHAPLEY_FILE],
    }
    .finish(
        serde_json::json!({
            "args": to_value(&args)?,
            "data": to_value(&loaded.artifact.data)?,
            "attribution": to_value(&config)?,
        }),
        vec![loaded.artifact.data.seed, config.seed],
    )
}

/// `threshold,fpr,tpr`; the final point's threshold is `-inf`.
pub fn write_roc_csv(path: &Path, curve: &metrics::RocCurve) -> Result<()> {
    let mut out = BufWriter::new(fs::File::create(path)?);
    writeln!(out, "threshold,fpr,tpr")?;
    for p in &curve.points {
        writeln!(out, "{},{},{}", p.threshold, p.fpr, p.tpr)?;
    }
    out.flush()?;
    Ok(())
}

fn roc_export(args: ModelArgs, argv: Vec<String>) -> Result<()> {
    let loaded = load_model_and_data(&args)?;
    let scores = loaded.artifact.ensemble.scores(&loaded.split.test);
    let curve = metrics::roc_curve(&scores, &loaded.split.test.labels())?;
    let report = metrics_report(&loaded.artifact, &loaded.split)?;
    ensure_dir(&args.out)?;
    write_roc_csv(&args.out.join(ROC_FILE), &curve)?;
    write_json(&args.out.join(METRICS_FILE), &report)?;
    RunContext {
        command: "roc-export",
        argv,
        out: args.out.clone(),
        inputs: loaded.inputs,
        artifacts: vec![ROC_FILE, METRICS_FILE],
    }
    .finish(
        serde_json::json!({ "args": to_value(&args)?, "data": to_value(&loaded.artifact.data)? }),
        vec![loaded.artifact.data.seed],
    )
}
