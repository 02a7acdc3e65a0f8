//! Block coordinate descent over the grammar parameters and the diffusion
//! model, REINFORCE for the grammar, splits and metrics.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Read;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::chem::{parse_smiles, to_hypergraph, MolecularHypergraph};
use crate::diffusion::{
    self, leaf_fingerprint, DiffusionConfig, DiffusionError, DiffusionParams, GraphView, Head,
    LossKind,
};
use crate::geometry::{Geometry, GeometryError};
use crate::mol_grammar::{
    log_prob, map_decomposition, molecule_rng, sample_decomposition, DecompositionError,
    ThetaParams,
};
use crate::optim::Adam;
use crate::trees::{CanonicalCode, TreeError};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("dataset has {0} records, at least 5 are needed")]
    TooSmall(usize),
    #[error("duplicate mol_id {0}")]
    DuplicateId(String),
    #[error("record {mol_id}: {message}")]
    BadRecord { mol_id: String, message: String },
    #[error("line {line}: {message}")]
    Csv { line: u64, message: String },
    #[error("invalid config: {0}")]
    Config(String),
    #[error("molecule {mol_id}: {source}")]
    NotCovered { mol_id: String, source: GeometryError },
    #[error("molecule {mol_id}: {source}")]
    Decomposition { mol_id: String, source: DecompositionError },
    #[error("need at least two predictions, got {0}")]
    TooFewPredictions(usize),
    #[error("{preds} predictions for {targets} targets")]
    LengthMismatch { preds: usize, targets: usize },
    #[error(transparent)]
    Diffusion(#[from] DiffusionError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Tree(#[from] TreeError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Regression,
    Classification,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainMode {
    /// Every molecule is attached; only training labels are read.
    Transductive,
    /// Only training molecules are attached; test molecules are predicted.
    Inductive,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CoveragePolicy {
    Exclude,
    Error,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub outer_epochs: usize,
    pub inner_epochs: usize,
    pub lr_theta: f64,
    pub lr_diffusion: f64,
    pub n_reinforce_samples: usize,
    pub baseline: bool,
    pub split_ratio: f64,
    pub seeds: Vec<u64>,
    pub mode: TrainMode,
    pub task: Task,
    pub policy: CoveragePolicy,
    /// Re-initialize the diffusion model before every inner loop.
    pub reset_inner: bool,
    /// Half-width of the uniform initialization of the grammar MLP weights.
    pub theta_init_scale: f64,
    /// Initial output bias of the grammar MLP. Positive values start every
    /// `phi` below one half, so the first MAP decompositions are fine-grained.
    pub theta_init_bias: f64,
    pub diffusion: DiffusionConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            outer_epochs: 10,
            inner_epochs: 50,
            lr_theta: 0.01,
            lr_diffusion: 0.001,
            n_reinforce_samples: 4,
            baseline: true,
            split_ratio: 0.8,
            seeds: vec![0, 1, 2, 3, 4],
            mode: TrainMode::Transductive,
            task: Task::Regression,
            policy: CoveragePolicy::Exclude,
            reset_inner: false,
            theta_init_scale: 0.5,
            theta_init_bias: 1.0,
            diffusion: DiffusionConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::Config(m.to_string()));
        if !(self.split_ratio > 0.0 && self.split_ratio < 1.0) {
            return bad("split_ratio must lie in (0, 1)");
        }
        if self.inner_epochs == 0 {
            return bad("inner_epochs must be at least 1");
        }
        if self.n_reinforce_samples == 0 {
            return bad("n_reinforce_samples must be at least 1");
        }
        if self.seeds.is_empty() {
            return bad("seeds must not be empty");
        }
        for (name, lr) in [("lr_theta", self.lr_theta), ("lr_diffusion", self.lr_diffusion)] {
            if !(lr.is_finite() && lr > 0.0) {
                return Err(TrainError::Config(format!("{name} must be positive")));
            }
        }
        if !(self.theta_init_scale.is_finite() && self.theta_init_scale >= 0.0) {
            return bad("theta_init_scale must be non-negative");
        }
        if !self.theta_init_bias.is_finite() {
            return bad("theta_init_bias must be finite");
        }
        let d = &self.diffusion;
        if d.d == 0 || d.fingerprint_dim == 0 {
            return bad("dimensions must be positive");
        }
        if !(d.time.is_finite() && d.time >= 0.0) {
            return bad("diffusion time must be non-negative");
        }
        Ok(())
    }

    /// Diffusion settings with the head implied by the task.
    pub fn diffusion_for_task(&self) -> DiffusionConfig {
        let mut d = self.diffusion.clone();
        d.head = match self.task {
            Task::Regression => Head::Regression,
            Task::Classification => Head::Classification,
        };
        d
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitTag {
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub mol_id: String,
    pub smiles: String,
    pub target: f64,
    /// Fixed assignment; when present on every record it replaces the
    /// seeded split.
    #[serde(default)]
    pub split: Option<SplitTag>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    pub records: Vec<Record>,
    pub task: Task,
}

impl LabeledDataset {
    pub fn new(records: Vec<Record>, task: Task) -> Result<Self, TrainError> {
        let mut seen = BTreeSet::new();
        for r in &records {
            if !seen.insert(r.mol_id.as_str()) {
                return Err(TrainError::DuplicateId(r.mol_id.clone()));
            }
            let bad = |m: &str| TrainError::BadRecord { mol_id: r.mol_id.clone(), message: m.into() };
            if r.mol_id.is_empty() || r.mol_id.chars().any(char::is_whitespace) {
                return Err(bad("mol_id must be non-empty without whitespace"));
            }
            if !r.target.is_finite() {
                return Err(bad("target is not finite"));
            }
            if task == Task::Classification && r.target != 0.0 && r.target != 1.0 {
                return Err(bad("classification targets must be 0 or 1"));
            }
        }
        let tagged = records.iter().filter(|r| r.split.is_some()).count();
        if tagged != 0 && tagged != records.len() {
            return Err(TrainError::Config("split column must be set on every row or none".into()));
        }
        Ok(Self { records, task })
    }

    /// Reads `mol_id,smiles,target` CSV with a header row.
    pub fn read_csv(reader: impl Read, task: Task) -> Result<Self, TrainError> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let mut records = Vec::new();
        for row in rdr.deserialize::<Record>() {
            let record = row.map_err(|e| TrainError::Csv {
                line: e.position().map_or(0, |p| p.line()),
                message: e.to_string(),
            })?;
            records.push(record);
        }
        Self::new(records, task)
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

/// The bundled synthetic regression set.
pub fn synthetic_dataset() -> LabeledDataset {
    LabeledDataset::read_csv(crate::assets::SYNTHETIC_CSV.as_bytes(), Task::Regression)
        .expect("bundled dataset is valid")
}

/// Record indices of a train/test split.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

/// The dataset's own split when it has one, otherwise [`split_dataset`].
pub fn resolve_split(ds: &LabeledDataset, ratio: f64, seed: u64) -> Result<Split, TrainError> {
    if ds.records.first().is_some_and(|r| r.split.is_some()) {
        let (train, test): (Vec<usize>, Vec<usize>) =
            (0..ds.len()).partition(|&i| ds.records[i].split == Some(SplitTag::Train));
        if train.is_empty() || test.is_empty() {
            return Err(TrainError::Config("fixed split needs train and test rows".into()));
        }
        return Ok(Split { train, test });
    }
    split_dataset(ds, ratio, seed)
}

/// Seeded shuffle, then the first `round(ratio * n)` records train.
pub fn split_dataset(ds: &LabeledDataset, ratio: f64, seed: u64) -> Result<Split, TrainError> {
    let n = ds.len();
    if n < 5 {
        return Err(TrainError::TooSmall(n));
    }
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(TrainError::Config("split_ratio must lie in (0, 1)".into()));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_train = ((ratio * n as f64).round() as usize).clamp(1, n - 1);
    let test = order.split_off(n_train);
    Ok(Split { train: order, test })
}

/// Mean of the values pushed so far.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunningMean {
    count: u64,
    mean: f64,
}

impl RunningMean {
    pub fn mean(&self) -> f64 {
        self.mean
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn push(&mut self, x: f64) {
        self.count += 1;
        self.mean += (x - self.mean) / self.count as f64;
    }
}

/// Score-function estimate `(1/N) sum_n (l_n - b_n) grad log p(X_n)`. With a
/// baseline, `b_n` is the running mean of the losses seen before sample `n`.
pub fn reinforce_grad(
    scores: &[Vec<f64>],
    losses: &[f64],
    mut baseline: Option<&mut RunningMean>,
) -> Vec<f64> {
    assert_eq!(scores.len(), losses.len(), "one loss per sample");
    assert!(!scores.is_empty(), "at least one sample");
    let mut grad = vec![0.0; scores[0].len()];
    let n = scores.len() as f64;
    for (score, &l) in scores.iter().zip(losses) {
        let b = match baseline.as_deref() {
            Some(rm) if rm.count() > 0 => rm.mean(),
            _ => 0.0,
        };
        for (g, s) in grad.iter_mut().zip(score) {
            *g += (l - b) * s / n;
        }
        if let Some(rm) = baseline.as_deref_mut() {
            rm.push(l);
        }
    }
    grad
}

#[derive(Debug, Clone, PartialEq)]
struct Molecule {
    mol_id: String,
    smiles: String,
    h: MolecularHypergraph,
    fingerprint: Vec<f64>,
}

fn prepare(mol_id: &str, smiles: &str, cfg: &DiffusionConfig) -> Result<Molecule, TrainError> {
    let graph = parse_smiles(smiles).map_err(|e| TrainError::BadRecord {
        mol_id: mol_id.to_string(),
        message: e.to_string(),
    })?;
    let h = to_hypergraph(&graph);
    let fingerprint = leaf_fingerprint(&h, cfg.fingerprint_radius, cfg.fingerprint_dim);
    Ok(Molecule { mol_id: mol_id.to_string(), smiles: smiles.to_string(), h, fingerprint })
}

fn map_code(m: &Molecule, theta: &ThetaParams) -> Result<CanonicalCode, TrainError> {
    map_decomposition(&m.h, theta)
        .map(|d| d.junction_tree.canonical_code())
        .map_err(|source| TrainError::Decomposition { mol_id: m.mol_id.clone(), source })
}

/// A molecule attached to the geometry at a fixed junction-tree shape.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContextLeaf {
    pub mol_id: String,
    pub smiles: String,
    pub junction_tree: CanonicalCode,
}

/// Everything needed to predict: grammar, diffusion model, target scale and
/// the molecules attached at the end of training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Model {
    pub theta: ThetaParams,
    pub params: DiffusionParams,
    pub diffusion: DiffusionConfig,
    pub task: Task,
    pub target_mean: f64,
    pub target_std: f64,
    pub context: Vec<ContextLeaf>,
}

impl Model {
    fn to_target(&self, raw: f64) -> f64 {
        match self.task {
            Task::Regression => raw * self.target_std + self.target_mean,
            Task::Classification => raw,
        }
    }
}

fn not_covered(geo: &Geometry, code: &CanonicalCode) -> Result<GeometryError, TrainError> {
    let tree = code.to_tree()?;
    Ok(GeometryError::NotCovered {
        size: tree.len(),
        max_degree: tree.max_degree(),
        k: geo.k(),
        max_size: geo.max_tree_size(),
    })
}

fn attach_all(
    geo_meta: &Geometry,
    leaves: &[(&Molecule, CanonicalCode)],
) -> Result<(Geometry, BTreeMap<String, Vec<f64>>), TrainError> {
    let mut geo = geo_meta.clone();
    let mut fps = BTreeMap::new();
    for (m, code) in leaves {
        geo.attach_leaf(&code.to_tree()?, &m.mol_id)
            .map_err(|source| TrainError::NotCovered { mol_id: m.mol_id.clone(), source })?;
        fps.insert(m.mol_id.clone(), m.fingerprint.clone());
    }
    Ok((geo, fps))
}

/// Predictions for `(mol_id, smiles)` queries, in input order. Each new
/// molecule is attached on its own copy of the training geometry, so a
/// prediction does not depend on the rest of the batch. A query whose id and
/// SMILES match a context molecule is read from the unextended geometry.
pub fn predict(
    model: &Model,
    geo_meta: &Geometry,
    queries: &[(String, String)],
) -> Result<Vec<f64>, TrainError> {
    let dcfg = &model.diffusion;
    let context: Vec<Molecule> = model
        .context
        .iter()
        .map(|c| prepare(&c.mol_id, &c.smiles, dcfg))
        .collect::<Result<_, _>>()?;
    let leaves: Vec<(&Molecule, CanonicalCode)> = context
        .iter()
        .zip(&model.context)
        .map(|(m, c)| (m, c.junction_tree.clone()))
        .collect();
    let run = |leaves: &[(&Molecule, CanonicalCode)]| -> Result<BTreeMap<String, f64>, TrainError> {
        let (geo, fps) = attach_all(geo_meta, leaves)?;
        let view = GraphView::new(&geo, &fps, dcfg.fingerprint_dim)?;
        let raw = diffusion::predict(&view, &model.params, dcfg)?;
        Ok(view.leaf_ids.into_iter().zip(raw).collect())
    };
    let by_id: BTreeMap<&str, &ContextLeaf> =
        model.context.iter().map(|c| (c.mol_id.as_str(), c)).collect();
    let mut base: Option<BTreeMap<String, f64>> = None;
    let mut out = Vec::with_capacity(queries.len());
    for (id, smiles) in queries {
        if by_id.get(id.as_str()).is_some_and(|c| &c.smiles == smiles) {
            if base.is_none() {
                base = Some(run(&leaves)?);
            }
            let raw = base.as_ref().expect("computed")[id];
            out.push(model.to_target(raw));
            continue;
        }
        // The query id cannot clash with a context id.
        let leaf_id = "query#";
        let m = prepare(leaf_id, smiles, dcfg).map_err(|e| match e {
            TrainError::BadRecord { message, .. } => TrainError::BadRecord { mol_id: id.clone(), message },
            other => other,
        })?;
        let code = map_decomposition(&m.h, &model.theta)
            .map_err(|source| TrainError::Decomposition { mol_id: id.clone(), source })?
            .junction_tree
            .canonical_code();
        if geo_meta.meta_id(&code).is_none() {
            return Err(TrainError::NotCovered { mol_id: id.clone(), source: not_covered(geo_meta, &code)? });
        }
        let mut extended = leaves.clone();
        extended.push((&m, code));
        out.push(model.to_target(run(&extended)?[leaf_id]));
    }
    Ok(out)
}

/// Per-epoch training losses. Epoch 0 is the warm-up inner loop before the
/// first grammar update.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochTrace {
    pub epoch: usize,
    /// Mean loss of the REINFORCE samples (absent for epoch 0).
    pub reinforce_loss: Option<f64>,
    pub inner_losses: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub model: Model,
    pub excluded: Vec<String>,
    pub loss_trace: Vec<EpochTrace>,
    /// Molecules whose labels entered any loss.
    pub labels_used: BTreeSet<String>,
    /// `(mol_id, prediction, target)` for covered test molecules.
    pub test_predictions: Vec<(String, f64, f64)>,
}

/// Hands out standardized training labels and records every read.
struct LabelBook {
    labels: BTreeMap<String, f64>,
    used: BTreeSet<String>,
}

impl LabelBook {
    fn targets(&mut self, view: &GraphView) -> Vec<Option<f64>> {
        view.leaf_ids
            .iter()
            .map(|id| {
                let y = self.labels.get(id).copied();
                if y.is_some() {
                    self.used.insert(id.clone());
                }
                y
            })
            .collect()
    }
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt();
    (mean, if std > 0.0 { std } else { 1.0 })
}

/// Inner loop on a fixed geometry: `epochs` Adam steps on the diffusion
/// parameters, returning the loss before each step.
pub fn train_inner(
    view: &GraphView,
    params: &mut DiffusionParams,
    opt: &mut Adam,
    cfg: &DiffusionConfig,
    targets: &[Option<f64>],
    epochs: usize,
) -> Result<Vec<f64>, TrainError> {
    let mut losses = Vec::with_capacity(epochs);
    let mut flat = params.flatten();
    for _ in 0..epochs {
        let (loss, grads) = diffusion::loss_and_grads(view, params, cfg, targets)?;
        losses.push(loss);
        opt.step(&mut flat, &grads.flatten());
        params.assign(&flat)?;
    }
    Ok(losses)
}

const DIFFUSION_STREAM: u64 = u64::MAX;

/// Grammar parameters a run with `seed` starts from.
pub fn initial_theta(cfg: &TrainConfig, seed: u64) -> ThetaParams {
    let mut theta = ThetaParams::random(&mut ChaCha8Rng::seed_from_u64(seed), cfg.theta_init_scale);
    theta.b2 = cfg.theta_init_bias;
    theta
}

/// One full training run for `seed` on `split`.
pub fn train(
    cfg: &TrainConfig,
    ds: &LabeledDataset,
    split: &Split,
    geo_meta: &Geometry,
    seed: u64,
) -> Result<TrainOutcome, TrainError> {
    cfg.validate()?;
    if ds.task != cfg.task {
        return Err(TrainError::Config("dataset task differs from config task".into()));
    }
    let dcfg = cfg.diffusion_for_task();
    let mut theta = initial_theta(cfg, seed);

    let prepared = |idx: &[usize]| -> Result<Vec<Molecule>, TrainError> {
        idx.iter()
            .map(|&i| prepare(&ds.records[i].mol_id, &ds.records[i].smiles, &dcfg))
            .collect()
    };
    let train_mols = prepared(&split.train)?;
    let test_mols = prepared(&split.test)?;

    // Coverage is judged on the decomposition under the initial grammar.
    let mut excluded = Vec::new();
    let mut current: BTreeMap<String, CanonicalCode> = BTreeMap::new();
    for m in train_mols.iter().chain(&test_mols) {
        let code = map_code(m, &theta)?;
        if geo_meta.meta_id(&code).is_some() {
            current.insert(m.mol_id.clone(), code);
        } else {
            let source = not_covered(geo_meta, &code)?;
            match cfg.policy {
                CoveragePolicy::Error => {
                    return Err(TrainError::NotCovered { mol_id: m.mol_id.clone(), source })
                }
                CoveragePolicy::Exclude => excluded.push(m.mol_id.clone()),
            }
        }
    }
    let covered = |m: &&Molecule| current.contains_key(&m.mol_id);
    let train_mols: Vec<&Molecule> = train_mols.iter().filter(covered).collect();
    let test_mols: Vec<&Molecule> = test_mols.iter().filter(covered).collect();
    if train_mols.is_empty() {
        return Err(TrainError::Config("no covered training molecules".into()));
    }
    let attached: Vec<&Molecule> = match cfg.mode {
        TrainMode::Transductive => train_mols.iter().chain(&test_mols).copied().collect(),
        TrainMode::Inductive => train_mols.clone(),
    };

    let raw_train: Vec<f64> = train_mols
        .iter()
        .map(|m| ds.records.iter().find(|r| r.mol_id == m.mol_id).expect("record").target)
        .collect();
    let (target_mean, target_std) = match cfg.task {
        Task::Regression => mean_std(&raw_train),
        Task::Classification => (0.0, 1.0),
    };
    let mut book = LabelBook {
        labels: train_mols
            .iter()
            .zip(&raw_train)
            .map(|(m, y)| (m.mol_id.clone(), (y - target_mean) / target_std))
            .collect(),
        used: BTreeSet::new(),
    };

    let mut rng = molecule_rng(seed, &[DIFFUSION_STREAM], "");
    let mut params = DiffusionParams::init(geo_meta, dcfg.d, dcfg.fingerprint_dim, &mut rng);
    let init_params = params.clone();
    let mut opt = Adam::new(cfg.lr_diffusion, params.len());
    let mut theta_opt = Adam::new(cfg.lr_theta, ThetaParams::LEN);
    let mut baseline = RunningMean::default();
    let mut trace = Vec::new();

    let current_leaves = |current: &BTreeMap<String, CanonicalCode>| -> Vec<(&Molecule, CanonicalCode)> {
        attached.iter().map(|m| (*m, current[&m.mol_id].clone())).collect()
    };

    let (geo, fps) = attach_all(geo_meta, &current_leaves(&current))?;
    let mut view = GraphView::new(&geo, &fps, dcfg.fingerprint_dim)?;
    let targets = book.targets(&view);
    let inner = train_inner(&view, &mut params, &mut opt, &dcfg, &targets, cfg.inner_epochs)?;
    trace.push(EpochTrace { epoch: 0, reinforce_loss: None, inner_losses: inner });

    for epoch in 1..=cfg.outer_epochs {
        let mut scores = Vec::with_capacity(cfg.n_reinforce_samples);
        let mut losses = Vec::with_capacity(cfg.n_reinforce_samples);
        for sample in 0..cfg.n_reinforce_samples {
            let mut leaves = Vec::new();
            let mut score = vec![0.0; ThetaParams::LEN];
            for m in &attached {
                let mut mrng = molecule_rng(seed, &[epoch as u64, sample as u64], &m.mol_id);
                let dec = sample_decomposition(&m.h, &theta, &mut mrng).map_err(|source| {
                    TrainError::Decomposition { mol_id: m.mol_id.clone(), source }
                })?;
                let (_, g) = log_prob(&theta, &m.h, &dec.history).map_err(|source| {
                    TrainError::Decomposition { mol_id: m.mol_id.clone(), source }
                })?;
                for (s, x) in score.iter_mut().zip(&g) {
                    *s += x;
                }
                let code = dec.junction_tree.canonical_code();
                // An uncovered sample leaves the molecule out of this sample's geometry.
                if geo_meta.meta_id(&code).is_some() {
                    leaves.push((*m, code));
                }
            }
            let (geo, fps) = attach_all(geo_meta, &leaves)?;
            let sview = GraphView::new(&geo, &fps, dcfg.fingerprint_dim)?;
            let targets = book.targets(&sview);
            losses.push(diffusion::loss(&sview, &params, &dcfg, &targets)?);
            scores.push(score);
        }
        let grad = reinforce_grad(&scores, &losses, cfg.baseline.then_some(&mut baseline));
        let mut flat = theta.flatten();
        theta_opt.step(&mut flat, &grad);
        theta = ThetaParams::unflatten(&flat);

        for m in &attached {
            let code = map_code(m, &theta)?;
            if geo_meta.meta_id(&code).is_some() {
                current.insert(m.mol_id.clone(), code);
            }
        }
        let (geo, fps) = attach_all(geo_meta, &current_leaves(&current))?;
        view = GraphView::new(&geo, &fps, dcfg.fingerprint_dim)?;
        if cfg.reset_inner {
            params = init_params.clone();
            opt = Adam::new(cfg.lr_diffusion, params.len());
        }
        let targets = book.targets(&view);
        let inner = train_inner(&view, &mut params, &mut opt, &dcfg, &targets, cfg.inner_epochs)?;
        let mean_loss = losses.iter().sum::<f64>() / losses.len() as f64;
        trace.push(EpochTrace { epoch, reinforce_loss: Some(mean_loss), inner_losses: inner });
    }

    let model = Model {
        theta,
        params,
        diffusion: dcfg.clone(),
        task: cfg.task,
        target_mean,
        target_std,
        context: attached
            .iter()
            .map(|m| ContextLeaf {
                mol_id: m.mol_id.clone(),
                smiles: m.smiles.clone(),
                junction_tree: current[&m.mol_id].clone(),
            })
            .collect(),
    };

    let test_raw: Vec<f64> = match cfg.mode {
        TrainMode::Transductive => {
            let raw = diffusion::predict(&view, &model.params, &dcfg)?;
            let by_id: BTreeMap<&str, f64> =
                view.leaf_ids.iter().map(String::as_str).zip(raw).collect();
            test_mols.iter().map(|m| model.to_target(by_id[m.mol_id.as_str()])).collect()
        }
        TrainMode::Inductive if test_mols.is_empty() => Vec::new(),
        TrainMode::Inductive => {
            let queries: Vec<(String, String)> =
                test_mols.iter().map(|m| (m.mol_id.clone(), m.smiles.clone())).collect();
            predict(&model, geo_meta, &queries)?
        }
    };
    // Test labels are read only here, after every parameter is final.
    let test_predictions = test_mols
        .iter()
        .zip(test_raw)
        .map(|(m, p)| {
            let y = ds.records.iter().find(|r| r.mol_id == m.mol_id).expect("record").target;
            (m.mol_id.clone(), p, y)
        })
        .collect();
    Ok(TrainOutcome { model, excluded, loss_trace: trace, labels_used: book.used, test_predictions })
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub mae: Option<f64>,
    pub r2: Option<f64>,
    pub acc: Option<f64>,
    pub auc: Option<f64>,
}

/// ROC-AUC as the Mann-Whitney statistic with tied scores averaged; `None`
/// unless both classes are present.
pub fn roc_auc(scores: &[f64], labels: &[f64]) -> Option<f64> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut ranks = vec![0.0; scores.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = avg;
        }
        i = j + 1;
    }
    let pos = labels.iter().filter(|&&y| y == 1.0).count() as f64;
    let neg = labels.len() as f64 - pos;
    if pos == 0.0 || neg == 0.0 {
        return None;
    }
    let rank_sum: f64 = ranks.iter().zip(labels).filter(|(_, &y)| y == 1.0).map(|(r, _)| r).sum();
    Some((rank_sum - pos * (pos + 1.0) / 2.0) / (pos * neg))
}

pub fn compute_metrics(preds: &[f64], targets: &[f64], task: Task) -> Result<Metrics, TrainError> {
    if preds.len() != targets.len() {
        return Err(TrainError::LengthMismatch { preds: preds.len(), targets: targets.len() });
    }
    if preds.len() < 2 {
        return Err(TrainError::TooFewPredictions(preds.len()));
    }
    let n = preds.len() as f64;
    let mae = preds.iter().zip(targets).map(|(p, y)| (p - y).abs()).sum::<f64>() / n;
    Ok(match task {
        Task::Regression => {
            let mean = targets.iter().sum::<f64>() / n;
            let sst: f64 = targets.iter().map(|y| (y - mean).powi(2)).sum();
            let sse: f64 = preds.iter().zip(targets).map(|(p, y)| (p - y).powi(2)).sum();
            Metrics { mae: Some(mae), r2: (sst > 0.0).then(|| 1.0 - sse / sst), acc: None, auc: None }
        }
        Task::Classification => {
            let hits = preds
                .iter()
                .zip(targets)
                .filter(|(p, y)| (**p >= 0.5) == (**y == 1.0))
                .count();
            Metrics { mae: None, r2: None, acc: Some(hits as f64 / n), auc: roc_auc(preds, targets) }
        }
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedReport {
    pub seed: u64,
    #[serde(flatten)]
    pub metrics: Metrics,
    /// MAE of predicting the training mean (regression only).
    pub baseline_mae: Option<f64>,
    pub n_train: usize,
    pub n_test: usize,
    pub excluded: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub mean: Metrics,
    /// Sample standard deviation over seeds.
    pub std: Metrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedTrace {
    pub seed: u64,
    pub epochs: Vec<EpochTrace>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub config: TrainConfig,
    pub per_seed: Vec<SeedReport>,
    pub aggregate: Aggregate,
    pub loss_trace: Vec<SeedTrace>,
}

/// Trains on the split for `seed` and scores the held-out molecules.
pub fn run_seed(
    cfg: &TrainConfig,
    ds: &LabeledDataset,
    geo_meta: &Geometry,
    seed: u64,
) -> Result<(TrainOutcome, SeedReport), TrainError> {
    let split = resolve_split(ds, cfg.split_ratio, seed)?;
    let outcome = train(cfg, ds, &split, geo_meta, seed)?;
    let preds: Vec<f64> = outcome.test_predictions.iter().map(|t| t.1).collect();
    let targets: Vec<f64> = outcome.test_predictions.iter().map(|t| t.2).collect();
    let metrics = compute_metrics(&preds, &targets, cfg.task)?;
    let baseline_mae = (cfg.task == Task::Regression).then(|| {
        let mean = outcome.model.target_mean;
        targets.iter().map(|y| (y - mean).abs()).sum::<f64>() / targets.len() as f64
    });
    let report = SeedReport {
        seed,
        metrics,
        baseline_mae,
        n_train: split.train.len(),
        n_test: split.test.len(),
        excluded: outcome.excluded.clone(),
    };
    Ok((outcome, report))
}

fn mean_and_sample_std(xs: &[f64]) -> (Option<f64>, Option<f64>) {
    if xs.is_empty() {
        return (None, None);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let std = (xs.len() > 1)
        .then(|| (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt());
    (Some(mean), std)
}

pub fn aggregate(per_seed: &[SeedReport]) -> Aggregate {
    let pick = |f: fn(&Metrics) -> Option<f64>| -> (Option<f64>, Option<f64>) {
        let xs: Vec<f64> = per_seed.iter().filter_map(|r| f(&r.metrics)).collect();
        mean_and_sample_std(&xs)
    };
    let (mae, mae_s) = pick(|m| m.mae);
    let (r2, r2_s) = pick(|m| m.r2);
    let (acc, acc_s) = pick(|m| m.acc);
    let (auc, auc_s) = pick(|m| m.auc);
    Aggregate {
        mean: Metrics { mae, r2, acc, auc },
        std: Metrics { mae: mae_s, r2: r2_s, acc: acc_s, auc: auc_s },
    }
}

pub fn build_report(
    cfg: &TrainConfig,
    runs: Vec<(TrainOutcome, SeedReport)>,
) -> (Report, Vec<TrainOutcome>) {
    let mut per_seed = Vec::new();
    let mut loss_trace = Vec::new();
    let mut outcomes = Vec::new();
    for (outcome, report) in runs {
        loss_trace.push(SeedTrace { seed: report.seed, epochs: outcome.loss_trace.clone() });
        per_seed.push(report);
        outcomes.push(outcome);
    }
    let aggregate = aggregate(&per_seed);
    (Report { config: cfg.clone(), per_seed, aggregate, loss_trace }, outcomes)
}

/// Loss kind matching the task when the caller has no preference.
pub fn default_loss(task: Task) -> LossKind {
    match task {
        Task::Regression => LossKind::Mse,
        Task::Classification => LossKind::Bce,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn auc_examples() {
        assert_eq!(roc_auc(&[0.1, 0.9], &[0.0, 1.0]), Some(1.0));
        assert_eq!(roc_auc(&[0.9, 0.1], &[0.0, 1.0]), Some(0.0));
        assert_eq!(roc_auc(&[0.5, 0.5], &[0.0, 1.0]), Some(0.5));
        assert_eq!(roc_auc(&[0.2, 0.3], &[1.0, 1.0]), None);
    }

    #[test]
    fn regression_metrics() {
        let y = [1.0, 2.0, 3.0, 6.0];
        let m = compute_metrics(&y, &y, Task::Regression).unwrap();
        assert_eq!((m.mae, m.r2), (Some(0.0), Some(1.0)));
        let m = compute_metrics(&[3.0; 4], &y, Task::Regression).unwrap();
        assert!(m.r2.unwrap().abs() < 1e-15);
        assert!(compute_metrics(&[1.0], &[1.0], Task::Regression).is_err());
    }

    #[test]
    fn classification_metrics() {
        let m = compute_metrics(&[0.2, 0.7, 0.6], &[0.0, 1.0, 0.0], Task::Classification).unwrap();
        assert_eq!(m.acc, Some(2.0 / 3.0));
        assert_eq!(m.auc, Some(1.0));
        let m = compute_metrics(&[0.2, 0.7], &[1.0, 1.0], Task::Classification).unwrap();
        assert_eq!(m.auc, None);
    }

    #[test]
    fn running_mean_baseline_excludes_current_sample() {
        let scores = vec![vec![1.0], vec![1.0]];
        let mut rm = RunningMean::default();
        // b_1 = 0, b_2 = 4.
        let g = reinforce_grad(&scores, &[4.0, 6.0], Some(&mut rm));
        assert_eq!(g, vec![(4.0 + 2.0) / 2.0]);
        assert_eq!(rm.mean(), 5.0);
        assert_eq!(reinforce_grad(&scores, &[4.0, 6.0], None), vec![5.0]);
    }

    #[test]
    fn aggregate_uses_sample_std() {
        let seed = |mae| SeedReport {
            seed: 0,
            metrics: Metrics { mae: Some(mae), ..Default::default() },
            baseline_mae: None,
            n_train: 0,
            n_test: 0,
            excluded: vec![],
        };
        let agg = aggregate(&[seed(1.0), seed(3.0)]);
        assert_eq!(agg.mean.mae, Some(2.0));
        assert_eq!(agg.std.mae, Some(2f64.sqrt()));
        assert_eq!(agg.mean.auc, None);
    }
}
