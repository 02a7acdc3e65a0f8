//! Graph diffusion over a geometry: encoders, attention diffusivity,
//! fixed-step integration, masked decoding and exact gradients.

mod fingerprint;
mod ode;

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{Geometry, NodeKind};
use crate::trees::CanonicalCode;

pub use fingerprint::leaf_fingerprint;
pub use ode::Csr;
use ode::Diffusivity;

#[derive(Debug, Error, PartialEq)]
pub enum DiffusionError {
    #[error("no embedding for meta tree {0}")]
    MissingEmbedding(String),
    #[error("no fingerprint for molecule {0}")]
    MissingFingerprint(String),
    #[error("fingerprint for {mol_id} has length {got}, expected {expected}")]
    FingerprintLength { mol_id: String, expected: usize, got: usize },
    #[error("{got} targets for {expected} leaves")]
    TargetLength { expected: usize, got: usize },
    #[error("integration diverged at step {step}")]
    Diverged { step: usize },
    #[error("no training labels")]
    EmptyTrainMask,
    #[error("parameter vector has length {got}, expected {expected}")]
    ParamLength { expected: usize, got: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    Euler,
    Rk4,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Attention,
    Uniform,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Head {
    Regression,
    Classification,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    Mse,
    Mae,
    /// Binary cross-entropy on the decoder logit.
    Bce,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiffusionConfig {
    pub d: usize,
    pub fingerprint_dim: usize,
    pub fingerprint_radius: usize,
    pub time: f64,
    pub steps: usize,
    pub scheme: Scheme,
    pub mode: Mode,
    pub head: Head,
    pub loss: LossKind,
}

impl Default for DiffusionConfig {
    fn default() -> Self {
        Self {
            d: 32,
            fingerprint_dim: 64,
            fingerprint_radius: 2,
            time: 1.0,
            steps: 16,
            scheme: Scheme::Rk4,
            mode: Mode::Attention,
            head: Head::Regression,
            loss: LossKind::Mse,
        }
    }
}

/// Dense row-major `rows x cols` matrix, one row per geometry node.
#[derive(Debug, Clone, PartialEq)]
pub struct StateMatrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl StateMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }
}

/// Learnable parameters. The same shape doubles as the gradient.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiffusionParams {
    pub d: usize,
    pub fingerprint_dim: usize,
    pub embedding: BTreeMap<CanonicalCode, Vec<f64>>,
    /// `fingerprint_dim x d`, row-major.
    pub leaf_w: Vec<f64>,
    pub leaf_b: Vec<f64>,
    /// `d x d`, row-major; `k_i = W_K u_i`.
    pub w_k: Vec<f64>,
    pub w_q: Vec<f64>,
    pub dec_w: Vec<f64>,
    pub dec_b: f64,
}

fn uniform(rng: &mut impl Rng, len: usize, scale: f64) -> Vec<f64> {
    (0..len).map(|_| rng.gen_range(-scale..scale)).collect()
}

impl DiffusionParams {
    /// Seeded small-uniform initialization with an embedding for every meta
    /// tree of `geo`.
    pub fn init(geo: &Geometry, d: usize, fingerprint_dim: usize, rng: &mut impl Rng) -> Self {
        let mut p = Self {
            d,
            fingerprint_dim,
            embedding: BTreeMap::new(),
            leaf_w: uniform(rng, fingerprint_dim * d, 1.0 / (fingerprint_dim as f64).sqrt()),
            leaf_b: vec![0.0; d],
            w_k: uniform(rng, d * d, 1.0 / (d as f64).sqrt()),
            w_q: uniform(rng, d * d, 1.0 / (d as f64).sqrt()),
            dec_w: uniform(rng, d, 1.0 / (d as f64).sqrt()),
            dec_b: 0.0,
        };
        p.ensure_embeddings(geo, rng);
        p
    }

    /// All-zero parameters with the same shape as `self`.
    pub fn zeros_like(&self) -> Self {
        Self {
            d: self.d,
            fingerprint_dim: self.fingerprint_dim,
            embedding: self.embedding.keys().map(|k| (k.clone(), vec![0.0; self.d])).collect(),
            leaf_w: vec![0.0; self.leaf_w.len()],
            leaf_b: vec![0.0; self.d],
            w_k: vec![0.0; self.d * self.d],
            w_q: vec![0.0; self.d * self.d],
            dec_w: vec![0.0; self.d],
            dec_b: 0.0,
        }
    }

    /// Adds missing meta-tree embeddings; returns how many were added.
    pub fn ensure_embeddings(&mut self, geo: &Geometry, rng: &mut impl Rng) -> usize {
        let mut added = 0;
        for node in geo.meta_nodes() {
            let code = node.canonical.clone().expect("meta nodes carry a code");
            if !self.embedding.contains_key(&code) {
                self.embedding.insert(code, uniform(rng, self.d, 0.1));
                added += 1;
            }
        }
        added
    }

    pub fn len(&self) -> usize {
        self.embedding.len() * self.d
            + self.leaf_w.len()
            + self.leaf_b.len()
            + self.w_k.len()
            + self.w_q.len()
            + self.dec_w.len()
            + 1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Embeddings in code order, then leaf encoder, `W_K`, `W_Q`, decoder.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.len());
        for v in self.embedding.values() {
            out.extend(v);
        }
        for part in [&self.leaf_w, &self.leaf_b, &self.w_k, &self.w_q, &self.dec_w] {
            out.extend(part);
        }
        out.push(self.dec_b);
        out
    }

    pub fn assign(&mut self, flat: &[f64]) -> Result<(), DiffusionError> {
        if flat.len() != self.len() {
            return Err(DiffusionError::ParamLength { expected: self.len(), got: flat.len() });
        }
        let mut rest = flat;
        let mut take = |dst: &mut [f64]| {
            let (head, tail) = rest.split_at(dst.len());
            dst.copy_from_slice(head);
            rest = tail;
        };
        for v in self.embedding.values_mut() {
            take(v);
        }
        take(&mut self.leaf_w);
        take(&mut self.leaf_b);
        take(&mut self.w_k);
        take(&mut self.w_q);
        take(&mut self.dec_w);
        let mut b = [0.0];
        take(&mut b);
        self.dec_b = b[0];
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.flatten().iter().all(|x| x.is_finite())
    }
}

#[derive(Debug, Clone, PartialEq)]
enum RowSource {
    Meta(CanonicalCode),
    Leaf(Vec<f64>),
}

/// A geometry frozen for diffusion: sparsity pattern, per-row encoder input
/// and the leaf rows in id order.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphView {
    pub csr: Csr,
    sources: Vec<RowSource>,
    pub leaf_rows: Vec<usize>,
    pub leaf_ids: Vec<String>,
}

impl GraphView {
    pub fn new(
        geo: &Geometry,
        fingerprints: &BTreeMap<String, Vec<f64>>,
        fingerprint_dim: usize,
    ) -> Result<Self, DiffusionError> {
        let mut sources = Vec::with_capacity(geo.node_count());
        let mut leaf_rows = Vec::new();
        let mut leaf_ids = Vec::new();
        for node in geo.nodes() {
            match node.kind {
                NodeKind::Root | NodeKind::MetaTree => {
                    sources.push(RowSource::Meta(node.canonical.clone().expect("meta code")));
                }
                NodeKind::MolecularLeaf => {
                    let mol_id = node.mol_id.clone().expect("leaf id");
                    let fp = fingerprints
                        .get(&mol_id)
                        .ok_or_else(|| DiffusionError::MissingFingerprint(mol_id.clone()))?;
                    if fp.len() != fingerprint_dim {
                        return Err(DiffusionError::FingerprintLength {
                            mol_id,
                            expected: fingerprint_dim,
                            got: fp.len(),
                        });
                    }
                    sources.push(RowSource::Leaf(fp.clone()));
                    leaf_rows.push(node.id);
                    leaf_ids.push(mol_id);
                }
            }
        }
        Ok(Self { csr: Csr::from_adjacency(&geo.adjacency()), sources, leaf_rows, leaf_ids })
    }

    pub fn node_count(&self) -> usize {
        self.sources.len()
    }
}

/// Initial state: meta rows are table lookups, leaf rows `fp W_leaf + b`.
pub fn encode(view: &GraphView, params: &DiffusionParams) -> Result<StateMatrix, DiffusionError> {
    let d = params.d;
    let mut u = StateMatrix::zeros(view.node_count(), d);
    for (i, src) in view.sources.iter().enumerate() {
        let row = u.row_mut(i);
        match src {
            RowSource::Meta(code) => {
                let e = params
                    .embedding
                    .get(code)
                    .ok_or_else(|| DiffusionError::MissingEmbedding(code.to_hex()))?;
                row.copy_from_slice(e);
            }
            RowSource::Leaf(fp) => {
                row.copy_from_slice(&params.leaf_b);
                for (f, &x) in fp.iter().enumerate() {
                    if x == 0.0 {
                        continue;
                    }
                    for (r, w) in row.iter_mut().zip(&params.leaf_w[f * d..(f + 1) * d]) {
                        *r += x * w;
                    }
                }
            }
        }
    }
    Ok(u)
}

fn diffusivity(params: &DiffusionParams, cfg: &DiffusionConfig) -> Diffusivity {
    Diffusivity::new(cfg.mode, params.d, &params.w_k, &params.w_q)
}

/// Row-stochastic weights aligned with `view.csr.targets`.
pub fn diffusivity_weights(
    view: &GraphView,
    u: &StateMatrix,
    params: &DiffusionParams,
    cfg: &DiffusionConfig,
) -> Vec<f64> {
    diffusivity(params, cfg).matrix(&view.csr, u)
}

pub fn integrate(
    view: &GraphView,
    u0: &StateMatrix,
    params: &DiffusionParams,
    cfg: &DiffusionConfig,
) -> Result<StateMatrix, DiffusionError> {
    let f = diffusivity(params, cfg);
    Ok(ode::integrate(&f, &view.csr, u0, cfg.time, cfg.steps, cfg.scheme, false)?.0)
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn logits(view: &GraphView, u: &StateMatrix, params: &DiffusionParams) -> Vec<f64> {
    view.leaf_rows
        .iter()
        .map(|&r| u.row(r).iter().zip(&params.dec_w).map(|(a, b)| a * b).sum::<f64>() + params.dec_b)
        .collect()
}

/// One scalar per leaf row, in `view.leaf_rows` order.
pub fn decode(view: &GraphView, u: &StateMatrix, params: &DiffusionParams, head: Head) -> Vec<f64> {
    let z = logits(view, u, params);
    match head {
        Head::Regression => z,
        Head::Classification => z.into_iter().map(sigmoid).collect(),
    }
}

/// Encode, integrate and decode.
pub fn predict(
    view: &GraphView,
    params: &DiffusionParams,
    cfg: &DiffusionConfig,
) -> Result<Vec<f64>, DiffusionError> {
    let u0 = encode(view, params)?;
    let ut = integrate(view, &u0, params, cfg)?;
    Ok(decode(view, &ut, params, cfg.head))
}

/// Mean loss over labeled logits and its derivative per logit.
fn pointwise_loss(
    z: &[f64],
    targets: &[Option<f64>],
    cfg: &DiffusionConfig,
) -> Result<(f64, Vec<f64>), DiffusionError> {
    if targets.len() != z.len() {
        return Err(DiffusionError::TargetLength { expected: z.len(), got: targets.len() });
    }
    let n = targets.iter().filter(|t| t.is_some()).count();
    if n == 0 {
        return Err(DiffusionError::EmptyTrainMask);
    }
    let mut loss = 0.0;
    let mut dz = vec![0.0; z.len()];
    for ((zi, t), g) in z.iter().zip(targets).zip(&mut dz) {
        let Some(y) = *t else { continue };
        let (l, dl) = match cfg.loss {
            LossKind::Bce => {
                // softplus(z) - y z
                let sp = if *zi > 0.0 { zi + (-zi).exp().ln_1p() } else { zi.exp().ln_1p() };
                (sp - y * zi, sigmoid(*zi) - y)
            }
            LossKind::Mse | LossKind::Mae => {
                let (p, dp) = match cfg.head {
                    Head::Regression => (*zi, 1.0),
                    Head::Classification => {
                        let s = sigmoid(*zi);
                        (s, s * (1.0 - s))
                    }
                };
                let r = p - y;
                match cfg.loss {
                    LossKind::Mse => (r * r, 2.0 * r * dp),
                    _ => (r.abs(), if r == 0.0 { 0.0 } else { r.signum() * dp }),
                }
            }
        };
        loss += l;
        *g = dl / n as f64;
    }
    Ok((loss / n as f64, dz))
}

/// Mean loss over leaves with a target; `None` marks an unlabeled leaf.
pub fn loss(
    view: &GraphView,
    params: &DiffusionParams,
    cfg: &DiffusionConfig,
    targets: &[Option<f64>],
) -> Result<f64, DiffusionError> {
    let u0 = encode(view, params)?;
    let ut = integrate(view, &u0, params, cfg)?;
    Ok(pointwise_loss(&logits(view, &ut, params), targets, cfg)?.0)
}

/// [`loss`] and its gradient with respect to every parameter.
pub fn loss_and_grads(
    view: &GraphView,
    params: &DiffusionParams,
    cfg: &DiffusionConfig,
    targets: &[Option<f64>],
) -> Result<(f64, DiffusionParams), DiffusionError> {
    if targets.len() != view.leaf_rows.len() {
        return Err(DiffusionError::TargetLength { expected: view.leaf_rows.len(), got: targets.len() });
    }
    if targets.iter().all(Option::is_none) {
        return Err(DiffusionError::EmptyTrainMask);
    }
    let f = diffusivity(params, cfg);
    let u0 = encode(view, params)?;
    let (ut, tape) = ode::integrate(&f, &view.csr, &u0, cfg.time, cfg.steps, cfg.scheme, true)?;
    let (loss, dz) = pointwise_loss(&logits(view, &ut, params), targets, cfg)?;

    let mut grads = params.zeros_like();
    let mut g_ut = StateMatrix::zeros(ut.rows, ut.cols);
    for (&row, &g) in view.leaf_rows.iter().zip(&dz) {
        if g == 0.0 {
            continue;
        }
        grads.dec_b += g;
        for (c, (&u, &w)) in ut.row(row).iter().zip(&params.dec_w).enumerate() {
            grads.dec_w[c] += g * u;
            g_ut.row_mut(row)[c] += g * w;
        }
    }
    let tape = tape.expect("recorded");
    let mut dm = vec![0.0; params.d * params.d];
    let g_u0 = ode::backward(&f, &view.csr, &tape, g_ut, &mut dm);
    (grads.w_k, grads.w_q) = f.split_grad(&dm, &params.w_k, &params.w_q);

    let d = params.d;
    for (i, src) in view.sources.iter().enumerate() {
        let g = g_u0.row(i);
        match src {
            RowSource::Meta(code) => {
                let e = grads.embedding.get_mut(code).expect("shape matches params");
                for (a, b) in e.iter_mut().zip(g) {
                    *a += b;
                }
            }
            RowSource::Leaf(fp) => {
                for (a, b) in grads.leaf_b.iter_mut().zip(g) {
                    *a += b;
                }
                for (fi, &x) in fp.iter().enumerate() {
                    if x == 0.0 {
                        continue;
                    }
                    for (a, b) in grads.leaf_w[fi * d..(fi + 1) * d].iter_mut().zip(g) {
                        *a += x * b;
                    }
                }
            }
        }
    }
    Ok((loss, grads))
}
