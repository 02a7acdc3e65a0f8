//! Command implementations behind the `geodeg` binary.

pub mod config;

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use geodeg::assets::corpus;
use geodeg::chem::{hypergraph_isomorphic, parse_smiles, to_hypergraph};
use geodeg::geometry::{build_meta_geometry, Geometry, GeometryError, GeometryStats};
use geodeg::meta_grammar::{
    build_meta_rules, verify_degree_coverage, verify_edit_complete, verify_minimal,
    verify_operation_complete, GrammarError, MetaRuleSet, MAX_DEGREE,
};
use geodeg::mol_grammar::{molecule_rng, sample_decomposition, ThetaParams};
use geodeg::training::{
    self, build_report, compute_metrics, resolve_split, run_seed, synthetic_dataset, Aggregate,
    LabeledDataset, Metrics, Model, Report, Task, TrainConfig, TrainError,
};
use geodeg::trees::MAX_ENUMERATION_SIZE;

use config::{Config, KEYS_HELP};

pub const CHECKPOINT_FORMAT: &str = "geodeg-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CliError {
    /// Bad flags or configuration; exit code 2.
    #[error("{0}")]
    Usage(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {message}")]
    File { path: PathBuf, message: String },
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Grammar(#[from] GrammarError),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("geometry checksum {actual} does not match the checkpoint's {expected}")]
    ChecksumMismatch { expected: String, actual: String },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            _ => 1,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "geodeg", version, about = "Grammar-induced geometry for molecular property prediction")]
pub struct Cli {
    /// Base seed: the default seed list becomes SEED..SEED+4 and
    /// verify-grammar draws start from it.
    #[arg(long, env = "GEODEG_SEED", global = true)]
    pub seed: Option<u64>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build the meta geometry and write it as a GEOM v1 file.
    BuildMeta(BuildMetaArgs),
    /// Check degree coverage, edit-completeness, minimality and corpus
    /// reconstruction; exits 1 if any check fails.
    VerifyGrammar(VerifyArgs),
    /// Train one model per seed and write a checkpoint and a report.
    Train(TrainArgs),
    /// Predict properties for a CSV of molecules.
    Predict(PredictArgs),
    /// Recompute test metrics from a checkpoint.
    Eval(EvalArgs),
    /// Summarize a geometry file or a checkpoint.
    Inspect(InspectArgs),
}

#[derive(Debug, Args)]
pub struct BuildMetaArgs {
    #[arg(long, default_value_t = 4, value_parser = clap::value_parser!(u64).range(1..=MAX_DEGREE as u64))]
    pub k: u64,
    #[arg(long, default_value_t = 10, value_parser = clap::value_parser!(u64).range(1..=MAX_ENUMERATION_SIZE as u64))]
    pub max_size: u64,
    /// Rule to leave out (repeatable), e.g. p2_4.
    #[arg(long = "drop-rule")]
    pub drop_rules: Vec<String>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    #[arg(long, default_value_t = 4, value_parser = clap::value_parser!(u64).range(1..=MAX_DEGREE as u64))]
    pub k: u64,
    /// Largest tree size checked.
    #[arg(long, default_value_t = 8, value_parser = clap::value_parser!(u64).range(1..=8))]
    pub n_max: u64,
    /// Rule to leave out (repeatable).
    #[arg(long = "drop-rule")]
    pub drop_rules: Vec<String>,
    /// Random grammar parameter draws for corpus reconstruction.
    #[arg(long, default_value_t = 1000)]
    pub draws: u64,
}

#[derive(Debug, Args)]
pub struct ConfigArgs {
    /// File of `key = value` lines.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override one key (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE", long_help = KEYS_HELP)]
    pub set: Vec<String>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// CSV with header mol_id,smiles,target[,split]; the bundled synthetic
    /// set when omitted.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// GEOM v1 file; built from k and max_size when omitted.
    #[arg(long)]
    pub geometry: Option<PathBuf>,
    #[command(flatten)]
    pub config: ConfigArgs,
    #[arg(long)]
    pub out_checkpoint: PathBuf,
    #[arg(long)]
    pub out_report: PathBuf,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// CSV with at least the columns mol_id and smiles.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub geometry: Option<PathBuf>,
    /// Seed of the run to use; the first run when omitted.
    #[arg(long)]
    pub run: Option<u64>,
    /// Output CSV; stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// The dataset the checkpoint was trained on; the bundled synthetic set
    /// when omitted.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub geometry: Option<PathBuf>,
    /// Output JSON; stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct InspectArgs {
    /// A GEOM v1 file or a checkpoint.
    pub path: PathBuf,
}

/// Whether a command's checks passed; failures exit with code 1.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Ok,
    Failed,
}

pub fn read_text(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|source| CliError::Io { path: path.to_path_buf(), source })
}

fn write_file(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text).map_err(|source| CliError::Io { path: path.to_path_buf(), source })
}

fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("serializable");
    s.push('\n');
    s
}

fn emit(out: &mut dyn Write, text: &str) -> Result<(), CliError> {
    out.write_all(text.as_bytes())
        .map_err(|source| CliError::Io { path: PathBuf::from("<stdout>"), source })
}

/// Run-specific facts; the only part of an artifact allowed to differ
/// between identical runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metadata {
    pub created_unix: u64,
    pub threads: usize,
    pub geodeg_version: String,
}

impl Metadata {
    fn now() -> Self {
        Self {
            created_unix: SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs()),
            threads: rayon::current_num_threads(),
            geodeg_version: env!("CARGO_PKG_VERSION").to_string(),
        }
    }
}

fn rules_for(k: usize, drop: &[String]) -> Result<MetaRuleSet, CliError> {
    let rules = build_meta_rules(k)?;
    if drop.is_empty() {
        return Ok(rules);
    }
    let ids: Vec<&str> = drop.iter().map(String::as_str).collect();
    Ok(rules.without(&ids)?)
}

#[derive(Serialize)]
struct BuildMetaOutput<'a> {
    path: String,
    rules: Vec<&'a str>,
    #[serde(flatten)]
    stats: GeometryStats,
    meta_checksum: String,
}

pub fn cmd_build_meta(args: &BuildMetaArgs, out: &mut dyn Write) -> Result<Status, CliError> {
    let rules = rules_for(args.k as usize, &args.drop_rules)?;
    let geo = build_meta_geometry(&rules, args.max_size as usize)?;
    write_file(&args.out, &geo.serialize())?;
    let report = BuildMetaOutput {
        path: args.out.display().to_string(),
        rules: rules.ids(),
        stats: geo.stats(),
        meta_checksum: geo.meta_checksum(),
    };
    emit(out, &to_json(&report))?;
    Ok(Status::Ok)
}

#[derive(Debug, Serialize)]
pub struct CorpusCheck {
    pub molecules: usize,
    pub draws: u64,
    pub reconstructed: u64,
    pub total: u64,
    pub pass_rate: f64,
    /// `name@draw` for every failed reconstruction.
    pub failures: Vec<String>,
    pub pass: bool,
}

/// Samples decompositions of the bundled corpus under a sweep of grammar
/// parameters and checks that each one rebuilds the molecule.
pub fn check_corpus(draws: u64, seed: u64) -> Result<CorpusCheck, CliError> {
    let mols: Vec<_> = corpus()
        .into_iter()
        .map(|(name, smiles)| {
            let g = parse_smiles(smiles).map_err(|e| CliError::Checkpoint(format!("corpus {name}: {e}")))?;
            Ok((name, to_hypergraph(&g)))
        })
        .collect::<Result<_, CliError>>()?;
    let mut ok = 0;
    let mut failures = Vec::new();
    for draw in 0..draws {
        let frac = (draw as f64 + 0.5) / draws as f64;
        let mut theta_rng = molecule_rng(seed, &[draw], "theta");
        let mut theta = ThetaParams::random(&mut theta_rng, 3.0 * frac);
        theta.b2 = 4.0 * ((draw * 7919 % draws.max(1)) as f64 / draws as f64) - 2.0;
        for (name, h) in &mols {
            let mut rng = molecule_rng(seed, &[draw], name);
            let good = sample_decomposition(h, &theta, &mut rng).is_ok_and(|d| {
                d.is_partition_of(h)
                    && d.junction_tree.edges().len() + 1 == d.junction_tree.len()
                    && d.reconstruct().is_ok_and(|r| hypergraph_isomorphic(&r, h))
            });
            if good {
                ok += 1;
            } else {
                failures.push(format!("{name}@{draw}"));
            }
        }
    }
    let total = draws * mols.len() as u64;
    Ok(CorpusCheck {
        molecules: mols.len(),
        draws,
        reconstructed: ok,
        total,
        pass_rate: if total == 0 { 1.0 } else { ok as f64 / total as f64 },
        pass: failures.is_empty(),
        failures,
    })
}

pub fn cmd_verify(args: &VerifyArgs, seed: u64, out: &mut dyn Write) -> Result<Status, CliError> {
    let rules = rules_for(args.k as usize, &args.drop_rules)?;
    let n = args.n_max as usize;
    let coverage = verify_degree_coverage(&rules, n)?;
    let edit = verify_edit_complete(&rules, n)?;
    let operation = verify_operation_complete(&rules, n)?;
    let minimal = verify_minimal(&rules, n)?;
    let corpus = check_corpus(args.draws, seed)?;
    let pass = coverage.pass && edit.pass && operation.pass && minimal.pass && corpus.pass;
    let report = serde_json::json!({
        "k": args.k,
        "n_max": n,
        "rules": rules.ids(),
        "dropped": args.drop_rules,
        "degree_coverage": coverage,
        "edit_complete": edit,
        "operation_complete": operation,
        "minimal": minimal,
        "corpus_reconstruction": corpus,
        "pass": pass,
    });
    emit(out, &to_json(&report))?;
    Ok(if pass { Status::Ok } else { Status::Failed })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeometryRef {
    pub k: usize,
    pub max_size: usize,
    pub meta_checksum: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dims {
    pub d: usize,
    pub fingerprint_dim: usize,
    pub theta_len: usize,
    pub diffusion_len: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedRun {
    pub seed: u64,
    pub train_ids: Vec<String>,
    pub test_ids: Vec<String>,
    pub excluded: Vec<String>,
    pub model: Model,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub metadata: Metadata,
    pub geometry: GeometryRef,
    pub dims: Dims,
    pub config: TrainConfig,
    pub runs: Vec<SeedRun>,
}

impl Checkpoint {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = read_text(path)?;
        let ck: Checkpoint = serde_json::from_str(&text)
            .map_err(|e| CliError::File { path: path.to_path_buf(), message: e.to_string() })?;
        if ck.format != CHECKPOINT_FORMAT || ck.version != CHECKPOINT_VERSION {
            return Err(CliError::Checkpoint(format!(
                "unsupported format {:?} version {}",
                ck.format, ck.version
            )));
        }
        if ck.runs.is_empty() {
            return Err(CliError::Checkpoint("no runs".into()));
        }
        for run in &ck.runs {
            let m = &run.model;
            let dims = Dims {
                d: m.params.d,
                fingerprint_dim: m.params.fingerprint_dim,
                theta_len: m.theta.flatten().len(),
                diffusion_len: m.params.len(),
            };
            if dims != ck.dims {
                return Err(CliError::Checkpoint(format!("run {} disagrees with the dimension header", run.seed)));
            }
            if !m.theta.is_finite() || !m.params.is_finite() {
                return Err(CliError::Checkpoint(format!("run {} has non-finite parameters", run.seed)));
            }
        }
        Ok(ck)
    }

    fn run(&self, seed: Option<u64>) -> Result<&SeedRun, CliError> {
        match seed {
            None => Ok(&self.runs[0]),
            Some(s) => self
                .runs
                .iter()
                .find(|r| r.seed == s)
                .ok_or_else(|| CliError::Checkpoint(format!("no run with seed {s}"))),
        }
    }
}

/// Reads a geometry file without leaves, or builds one.
fn load_geometry(path: Option<&Path>, k: usize, max_size: usize) -> Result<Geometry, CliError> {
    let mut geo = match path {
        Some(p) => Geometry::deserialize(&read_text(p)?)
            .map_err(|e| CliError::File { path: p.to_path_buf(), message: e.to_string() })?,
        None => build_meta_geometry(&build_meta_rules(k)?, max_size)?,
    };
    geo.clear_leaves();
    Ok(geo)
}

fn checkpoint_geometry(path: Option<&Path>, ck: &Checkpoint) -> Result<Geometry, CliError> {
    let geo = load_geometry(path, ck.geometry.k, ck.geometry.max_size)?;
    let actual = geo.meta_checksum();
    if actual != ck.geometry.meta_checksum {
        return Err(CliError::ChecksumMismatch { expected: ck.geometry.meta_checksum.clone(), actual });
    }
    Ok(geo)
}

fn load_dataset(path: Option<&Path>, task: Task) -> Result<LabeledDataset, CliError> {
    match path {
        Some(p) => {
            let file = fs::File::open(p).map_err(|source| CliError::Io { path: p.to_path_buf(), source })?;
            LabeledDataset::read_csv(file, task)
                .map_err(|e| CliError::File { path: p.to_path_buf(), message: e.to_string() })
        }
        None if task == Task::Regression => Ok(synthetic_dataset()),
        None => Err(CliError::Usage("classification needs --data".into())),
    }
}

#[derive(Serialize)]
struct ReportFile<'a> {
    metadata: Metadata,
    #[serde(flatten)]
    report: &'a Report,
}

pub fn cmd_train(args: &TrainArgs, seed: Option<u64>, out: &mut dyn Write) -> Result<Status, CliError> {
    let cfg = Config::load(args.config.config.as_deref(), &args.config.set, seed)?;
    let tcfg = &cfg.train;
    tcfg.validate()?;
    let ds = load_dataset(args.data.as_deref(), tcfg.task)?;
    let geo = load_geometry(args.geometry.as_deref(), cfg.k, cfg.max_size)?;
    let runs = tcfg
        .seeds
        .par_iter()
        .map(|&s| run_seed(tcfg, &ds, &geo, s))
        .collect::<Result<Vec<_>, _>>()?;
    let (report, outcomes) = build_report(tcfg, runs);
    let mut seed_runs = Vec::new();
    for (outcome, &s) in outcomes.into_iter().zip(&tcfg.seeds) {
        let split = resolve_split(&ds, tcfg.split_ratio, s)?;
        seed_runs.push(SeedRun {
            seed: s,
            train_ids: split.train.iter().map(|&i| ds.records[i].mol_id.clone()).collect(),
            test_ids: outcome.test_predictions.iter().map(|t| t.0.clone()).collect(),
            excluded: outcome.excluded,
            model: outcome.model,
        });
    }
    let first = &seed_runs[0].model;
    let ck = Checkpoint {
        format: CHECKPOINT_FORMAT.into(),
        version: CHECKPOINT_VERSION,
        metadata: Metadata::now(),
        geometry: GeometryRef { k: geo.k(), max_size: geo.max_tree_size(), meta_checksum: geo.meta_checksum() },
        dims: Dims {
            d: first.params.d,
            fingerprint_dim: first.params.fingerprint_dim,
            theta_len: first.theta.flatten().len(),
            diffusion_len: first.params.len(),
        },
        config: tcfg.clone(),
        runs: seed_runs,
    };
    write_file(&args.out_checkpoint, &to_json(&ck))?;
    write_file(&args.out_report, &to_json(&ReportFile { metadata: ck.metadata.clone(), report: &report }))?;
    let summary = serde_json::json!({
        "per_seed": report.per_seed.iter().map(|r| serde_json::json!({
            "seed": r.seed,
            "mae": r.metrics.mae,
            "baseline_mae": r.baseline_mae,
            "acc": r.metrics.acc,
            "excluded": r.excluded.len(),
        })).collect::<Vec<_>>(),
        "aggregate": report.aggregate,
    });
    emit(out, &to_json(&summary))?;
    Ok(Status::Ok)
}

/// Reads `mol_id,smiles` pairs from a CSV with a header; other columns are
/// ignored.
pub fn read_queries(path: &Path) -> Result<Vec<(String, String)>, CliError> {
    let file = fs::File::open(path).map_err(|source| CliError::Io { path: path.to_path_buf(), source })?;
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file);
    let fail = |message: String| CliError::File { path: path.to_path_buf(), message };
    let headers = rdr.headers().map_err(|e| fail(e.to_string()))?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| fail(format!("missing column {name}")))
    };
    let (id_col, smiles_col) = (col("mol_id")?, col("smiles")?);
    let mut out = Vec::new();
    for row in rdr.records() {
        let row = row.map_err(|e| fail(e.to_string()))?;
        let line = row.position().map_or(0, |p| p.line());
        let field = |i: usize| {
            row.get(i)
                .filter(|s| !s.is_empty())
                .map(str::to_string)
                .ok_or_else(|| fail(format!("line {line}: empty or missing field")))
        };
        out.push((field(id_col)?, field(smiles_col)?));
    }
    Ok(out)
}

pub fn cmd_predict(args: &PredictArgs, out: &mut dyn Write) -> Result<Status, CliError> {
    let ck = Checkpoint::load(&args.checkpoint)?;
    let geo = checkpoint_geometry(args.geometry.as_deref(), &ck)?;
    let run = ck.run(args.run)?;
    let queries = read_queries(&args.input)?;
    let preds = training::predict(&run.model, &geo, &queries)?;
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["mol_id", "prediction"]).expect("in-memory write");
    for ((id, _), p) in queries.iter().zip(preds) {
        w.write_record([id.as_str(), &p.to_string()]).expect("in-memory write");
    }
    let text = String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 fields");
    match &args.out {
        Some(p) => write_file(p, &text)?,
        None => emit(out, &text)?,
    }
    Ok(Status::Ok)
}

#[derive(Debug, Serialize)]
pub struct EvalSeed {
    pub seed: u64,
    #[serde(flatten)]
    pub metrics: Metrics,
    pub baseline_mae: Option<f64>,
    pub n_test: usize,
}

#[derive(Debug, Serialize)]
pub struct EvalReport {
    pub per_seed: Vec<EvalSeed>,
    pub aggregate: Aggregate,
}

pub fn cmd_eval(args: &EvalArgs, out: &mut dyn Write) -> Result<Status, CliError> {
    let ck = Checkpoint::load(&args.checkpoint)?;
    let geo = checkpoint_geometry(args.geometry.as_deref(), &ck)?;
    let ds = load_dataset(args.data.as_deref(), ck.config.task)?;
    let by_id: BTreeMap<&str, &training::Record> = ds.records.iter().map(|r| (r.mol_id.as_str(), r)).collect();
    let mut per_seed = Vec::new();
    let mut reports = Vec::new();
    for run in &ck.runs {
        let mut queries = Vec::new();
        let mut targets = Vec::new();
        for id in &run.test_ids {
            let r = by_id
                .get(id.as_str())
                .ok_or_else(|| CliError::Checkpoint(format!("test molecule {id} is not in the dataset")))?;
            queries.push((r.mol_id.clone(), r.smiles.clone()));
            targets.push(r.target);
        }
        let preds = training::predict(&run.model, &geo, &queries)?;
        let metrics = compute_metrics(&preds, &targets, ck.config.task)?;
        let baseline_mae = (ck.config.task == Task::Regression).then(|| {
            let mean = run.model.target_mean;
            targets.iter().map(|y| (y - mean).abs()).sum::<f64>() / targets.len() as f64
        });
        reports.push(training::SeedReport {
            seed: run.seed,
            metrics: metrics.clone(),
            baseline_mae,
            n_train: run.train_ids.len(),
            n_test: targets.len(),
            excluded: run.excluded.clone(),
        });
        per_seed.push(EvalSeed { seed: run.seed, metrics, baseline_mae, n_test: targets.len() });
    }
    let report = EvalReport { per_seed, aggregate: training::aggregate(&reports) };
    let text = to_json(&report);
    match &args.out {
        Some(p) => write_file(p, &text)?,
        None => emit(out, &text)?,
    }
    Ok(Status::Ok)
}

pub fn cmd_inspect(args: &InspectArgs, out: &mut dyn Write) -> Result<Status, CliError> {
    let text = read_text(&args.path)?;
    let summary = if text.starts_with("GEOM ") {
        let geo = Geometry::deserialize(&text)
            .map_err(|e| CliError::File { path: args.path.clone(), message: e.to_string() })?;
        serde_json::json!({
            "kind": "geometry",
            "stats": geo.stats(),
            "checksum": geo.checksum(),
            "meta_checksum": geo.meta_checksum(),
            "leaves": geo.leaves().filter_map(|n| n.mol_id.clone()).collect::<Vec<_>>(),
        })
    } else {
        let ck = Checkpoint::load(&args.path)?;
        serde_json::json!({
            "kind": "checkpoint",
            "version": ck.version,
            "metadata": ck.metadata,
            "geometry": ck.geometry,
            "dims": ck.dims,
            "config": ck.config,
            "runs": ck.runs.iter().map(|r| serde_json::json!({
                "seed": r.seed,
                "n_train": r.train_ids.len(),
                "n_test": r.test_ids.len(),
                "excluded": r.excluded,
                "context_molecules": r.model.context.len(),
                "meta_embeddings": r.model.params.embedding.len(),
            })).collect::<Vec<_>>(),
        })
    };
    emit(out, &to_json(&summary))?;
    Ok(Status::Ok)
}

/// Dispatches a parsed command line.
pub fn run(cli: &Cli, out: &mut dyn Write) -> Result<Status, CliError> {
    match &cli.command {
        Command::BuildMeta(a) => cmd_build_meta(a, out),
        Command::VerifyGrammar(a) => cmd_verify(a, cli.seed.unwrap_or(0), out),
        Command::Train(a) => cmd_train(a, cli.seed, out),
        Command::Predict(a) => cmd_predict(a, out),
        Command::Eval(a) => cmd_eval(a, out),
        Command::Inspect(a) => cmd_inspect(a, out),
    }
}
