//! Learnable molecular grammar. Hyperedges are kept or postponed by i.i.d.
//! Bernoulli draws with probability `phi(e) = sigmoid(-F_theta(f(e)))`; each
//! connected group of kept hyperedges becomes one junction-tree node and one
//! production rule whose right-hand side holds only atoms.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::chem::{
    hyperedge_features, Atom, Hyperedge, HyperedgeKind, MolecularHypergraph,
    HYPEREDGE_FEATURE_DIM,
};
use crate::trees::{TreeError, UnorderedTree};

const H: usize = HYPEREDGE_FEATURE_DIM;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DecompositionError {
    #[error("molecule has no atoms")]
    Empty,
    #[error("hypergraph is not connected")]
    Disconnected,
    #[error("junction graph is not a tree: {0}")]
    JunctionNotTree(#[from] TreeError),
    #[error("inconsistent sampling history: {0}")]
    InconsistentHistory(&'static str),
    #[error("inconsistent anchors: {0}")]
    InconsistentAnchor(&'static str),
}

/// Two-layer MLP `F(x) = w2 . tanh(W1 x + b1) + b2` over hyperedge features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThetaParams {
    /// Row-major `16 x 16`, hidden by input.
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: f64,
}

impl ThetaParams {
    pub const LEN: usize = H * H + H + H + 1;

    pub fn zeros() -> Self {
        Self {
            w1: vec![0.0; H * H],
            b1: vec![0.0; H],
            w2: vec![0.0; H],
            b2: 0.0,
        }
    }

    /// Weights uniform in `[-scale, scale]`, biases zero.
    pub fn random<R: Rng + ?Sized>(rng: &mut R, scale: f64) -> Self {
        let mut t = Self::zeros();
        for w in t.w1.iter_mut().chain(t.w2.iter_mut()) {
            *w = rng.gen_range(-scale..=scale);
        }
        t
    }

    pub fn flatten(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(Self::LEN);
        v.extend(&self.w1);
        v.extend(&self.b1);
        v.extend(&self.w2);
        v.push(self.b2);
        v
    }

    pub fn unflatten(v: &[f64]) -> Self {
        assert_eq!(v.len(), Self::LEN, "theta vector length");
        Self {
            w1: v[..H * H].to_vec(),
            b1: v[H * H..H * H + H].to_vec(),
            w2: v[H * H + H..H * H + 2 * H].to_vec(),
            b2: v[Self::LEN - 1],
        }
    }

    pub fn is_finite(&self) -> bool {
        self.flatten().iter().all(|x| x.is_finite())
    }

    fn hidden(&self, feat: &[f64]) -> [f64; H] {
        let mut h = [0.0; H];
        for (j, hj) in h.iter_mut().enumerate() {
            let row = &self.w1[j * H..(j + 1) * H];
            let z: f64 = row.iter().zip(feat).map(|(w, x)| w * x).sum::<f64>() + self.b1[j];
            *hj = z.tanh();
        }
        h
    }

    pub fn mlp(&self, feat: &[f64]) -> f64 {
        assert_eq!(feat.len(), H, "feature length");
        let h = self.hidden(feat);
        h.iter().zip(&self.w2).map(|(a, b)| a * b).sum::<f64>() + self.b2
    }

    /// Adds `scale * dF/dtheta` at `feat` into a flat gradient.
    fn accumulate_mlp_grad(&self, feat: &[f64], scale: f64, grad: &mut [f64]) {
        let h = self.hidden(feat);
        for j in 0..H {
            let back = scale * self.w2[j] * (1.0 - h[j] * h[j]);
            for k in 0..H {
                grad[j * H + k] += back * feat[k];
            }
            grad[H * H + j] += back;
            grad[H * H + H + j] += scale * h[j];
        }
        grad[Self::LEN - 1] += scale;
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `log(sigmoid(x))` without overflow.
fn log_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        -(-x).exp().ln_1p()
    } else {
        x - x.exp().ln_1p()
    }
}

/// Probability of keeping a hyperedge with features `feat`.
pub fn phi(theta: &ThetaParams, feat: &[f64]) -> f64 {
    sigmoid(-theta.mlp(feat))
}

/// One sampling round: the hyperedges still unowned when it started, the
/// Bernoulli outcomes for them, and the hyperedge forced in when every
/// outcome was 0.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub candidates: Vec<usize>,
    pub draws: Vec<bool>,
    pub forced: Option<usize>,
}

impl IterationRecord {
    pub fn selected(&self) -> Vec<usize> {
        match self.forced {
            Some(e) => vec![e],
            None => self
                .candidates
                .iter()
                .zip(&self.draws)
                .filter(|(_, &x)| x)
                .map(|(&e, _)| e)
                .collect(),
        }
    }
}

/// Atoms and hyperedges owned by one junction-tree node.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Component {
    pub atoms: Vec<usize>,
    pub hyperedges: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AtomRef {
    Interior(usize),
    Anchor(usize),
}

/// Boundary atom of a rule, glued to neighboring fragments.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Anchor {
    pub origin: usize,
    pub atom: Atom,
    /// Source hyperedges outside the component that touch this atom.
    pub external_hyperedges: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RuleHyperedge {
    pub members: Vec<AtomRef>,
    pub kind: HyperedgeKind,
}

/// Production replacing one non-terminal with `|anchors|` anchors by a
/// fragment of atoms and hyperedges. The right-hand side references atoms
/// only, so it holds no non-terminals by construction.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MolecularRule {
    /// Interior atoms with their source index.
    pub rhs_atoms: Vec<(usize, Atom)>,
    pub anchors: Vec<Anchor>,
    pub rhs_hyperedges: Vec<RuleHyperedge>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Decomposition {
    pub junction_tree: UnorderedTree,
    /// Indexed by junction-tree node.
    pub components: Vec<Component>,
    /// Indexed by junction-tree node; empty for a lone atom.
    pub rules: Vec<MolecularRule>,
    pub history: Vec<IterationRecord>,
    pub log_prob: f64,
    /// Set only for single-atom molecules, which have no hyperedges.
    pub lone_atom: Option<Atom>,
}

fn features(h: &MolecularHypergraph) -> Vec<[f64; H]> {
    (0..h.hyperedge_count())
        .map(|e| hyperedge_features(h, e))
        .collect()
}

/// `phi` for every hyperedge of `h`.
pub fn hyperedge_phis(h: &MolecularHypergraph, theta: &ThetaParams) -> Vec<f64> {
    features(h).iter().map(|f| phi(theta, f)).collect()
}

fn bernoulli_log(phi_minus: f64, x: bool) -> f64 {
    // phi = sigmoid(-F), 1 - phi = sigmoid(F); phi_minus is -F.
    if x {
        log_sigmoid(phi_minus)
    } else {
        log_sigmoid(-phi_minus)
    }
}

struct UnionFind(Vec<usize>);

impl UnionFind {
    fn new(n: usize) -> Self {
        Self((0..n).collect())
    }
    fn find(&mut self, x: usize) -> usize {
        let mut r = x;
        while self.0[r] != r {
            r = self.0[r];
        }
        let mut y = x;
        while self.0[y] != r {
            let next = self.0[y];
            self.0[y] = r;
            y = next;
        }
        r
    }
    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            self.0[ra.max(rb)] = ra.min(rb);
        }
    }
}

fn decompose(
    h: &MolecularHypergraph,
    theta: &ThetaParams,
    mut draw: impl FnMut(f64) -> bool,
) -> Result<Decomposition, DecompositionError> {
    if h.atom_count() == 0 {
        return Err(DecompositionError::Empty);
    }
    if !h.is_connected() {
        return Err(DecompositionError::Disconnected);
    }
    if h.hyperedge_count() == 0 {
        return Ok(Decomposition {
            junction_tree: UnorderedTree::single(),
            components: vec![Component {
                atoms: vec![0],
                hyperedges: Vec::new(),
            }],
            rules: Vec::new(),
            history: Vec::new(),
            log_prob: 0.0,
            lone_atom: Some(h.atoms[0]),
        });
    }
    let logits: Vec<f64> = features(h).iter().map(|f| -theta.mlp(f)).collect();
    let m = h.hyperedge_count();
    let mut owned = vec![false; m];
    let mut history = Vec::new();
    let mut log_prob = 0.0;
    let mut groups: Vec<Vec<usize>> = Vec::new();
    while owned.iter().any(|o| !o) {
        let candidates: Vec<usize> = (0..m).filter(|&e| !owned[e]).collect();
        let draws: Vec<bool> = candidates.iter().map(|&e| draw(sigmoid(logits[e]))).collect();
        for (&e, &x) in candidates.iter().zip(&draws) {
            log_prob += bernoulli_log(logits[e], x);
        }
        // A round with no successes forces in the most likely hyperedge. The
        // choice is a deterministic function of the recorded draws, so it
        // adds no probability mass of its own.
        let forced = if draws.iter().any(|&x| x) {
            None
        } else {
            Some(argmax_phi(&candidates, &logits))
        };
        let record = IterationRecord {
            candidates,
            draws,
            forced,
        };
        let selected = record.selected();
        for &e in &selected {
            owned[e] = true;
        }
        groups.extend(connected_groups(h, &selected));
        history.push(record);
    }
    assemble(h, groups, history, log_prob)
}

fn argmax_phi(candidates: &[usize], logits: &[f64]) -> usize {
    let mut best = candidates[0];
    for &e in &candidates[1..] {
        if logits[e] > logits[best] {
            best = e;
        }
    }
    best
}

/// Splits `selected` into groups connected through shared atoms, ordered by
/// smallest hyperedge index.
fn connected_groups(h: &MolecularHypergraph, selected: &[usize]) -> Vec<Vec<usize>> {
    let mut uf = UnionFind::new(selected.len());
    for i in 0..selected.len() {
        for j in i + 1..selected.len() {
            let (a, b) = (&h.hyperedges[selected[i]], &h.hyperedges[selected[j]]);
            if a.members.iter().any(|x| b.contains(*x)) {
                uf.union(i, j);
            }
        }
    }
    let mut by_root: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, &e) in selected.iter().enumerate() {
        by_root.entry(uf.find(i)).or_default().push(e);
    }
    let mut out: Vec<Vec<usize>> = by_root.into_values().collect();
    for g in &mut out {
        g.sort_unstable();
    }
    out.sort();
    out
}

fn assemble(
    h: &MolecularHypergraph,
    groups: Vec<Vec<usize>>,
    history: Vec<IterationRecord>,
    log_prob: f64,
) -> Result<Decomposition, DecompositionError> {
    let incidence = h.incidence();
    let components: Vec<Component> = groups
        .into_iter()
        .map(|hyperedges| {
            let atoms: BTreeSet<usize> = hyperedges
                .iter()
                .flat_map(|&e| h.hyperedges[e].members.iter().copied())
                .collect();
            Component {
                atoms: atoms.into_iter().collect(),
                hyperedges,
            }
        })
        .collect();

    // Each new component joins every earlier group of components it shares
    // atoms with, through that group's lowest-numbered sharing member. Two
    // groups never get linked twice, so the result is a forest, and a tree
    // once the hypergraph is connected.
    let mut uf = UnionFind::new(components.len());
    let mut edges = Vec::new();
    for (c, comp) in components.iter().enumerate() {
        let mut linked = BTreeSet::new();
        for (prev, other) in components[..c].iter().enumerate() {
            if comp.atoms.iter().any(|a| other.atoms.binary_search(a).is_ok()) {
                let group = uf.find(prev);
                if linked.insert(group) {
                    edges.push((prev, c));
                }
            }
        }
        for &g in &linked {
            uf.union(g, c);
        }
    }
    let junction_tree = UnorderedTree::from_edges(components.len(), &edges)?;

    let rules = components
        .iter()
        .map(|comp| construct_rule(h, &incidence, comp))
        .collect();
    Ok(Decomposition {
        junction_tree,
        components,
        rules,
        history,
        log_prob,
        lone_atom: None,
    })
}

/// Builds the production for one component. Atoms touching hyperedges
/// outside the component become anchors; the rest are interior.
pub fn construct_rule(
    h: &MolecularHypergraph,
    incidence: &[Vec<usize>],
    comp: &Component,
) -> MolecularRule {
    let mut rhs_atoms = Vec::new();
    let mut anchors = Vec::new();
    let mut refs = BTreeMap::new();
    for &a in &comp.atoms {
        let external: Vec<usize> = incidence[a]
            .iter()
            .copied()
            .filter(|e| comp.hyperedges.binary_search(e).is_err())
            .collect();
        if external.is_empty() {
            refs.insert(a, AtomRef::Interior(rhs_atoms.len()));
            rhs_atoms.push((a, h.atoms[a]));
        } else {
            refs.insert(a, AtomRef::Anchor(anchors.len()));
            anchors.push(Anchor {
                origin: a,
                atom: h.atoms[a],
                external_hyperedges: external,
            });
        }
    }
    let rhs_hyperedges = comp
        .hyperedges
        .iter()
        .map(|&e| {
            let he = &h.hyperedges[e];
            RuleHyperedge {
                members: he.members.iter().map(|a| refs[a]).collect(),
                kind: he.kind,
            }
        })
        .collect();
    MolecularRule {
        rhs_atoms,
        anchors,
        rhs_hyperedges,
    }
}

/// Algorithm 1 with Bernoulli draws from `rng`.
pub fn sample_decomposition<R: Rng + ?Sized>(
    h: &MolecularHypergraph,
    theta: &ThetaParams,
    rng: &mut R,
) -> Result<Decomposition, DecompositionError> {
    decompose(h, theta, |p| rng.gen::<f64>() < p)
}

/// Deterministic decomposition keeping exactly the hyperedges with
/// `phi >= 0.5` in every round.
pub fn map_decomposition(
    h: &MolecularHypergraph,
    theta: &ThetaParams,
) -> Result<Decomposition, DecompositionError> {
    decompose(h, theta, |p| p >= 0.5)
}

/// Replays `history` on `h`, returning the log-probability under `theta` and
/// its gradient (flattened like [`ThetaParams::flatten`]).
pub fn log_prob(
    theta: &ThetaParams,
    h: &MolecularHypergraph,
    history: &[IterationRecord],
) -> Result<(f64, Vec<f64>), DecompositionError> {
    let bad = DecompositionError::InconsistentHistory;
    let mut grad = vec![0.0; ThetaParams::LEN];
    let m = h.hyperedge_count();
    if m == 0 {
        return if history.is_empty() {
            Ok((0.0, grad))
        } else {
            Err(bad("single-atom molecule has no draws"))
        };
    }
    let feats = features(h);
    let logits: Vec<f64> = feats.iter().map(|f| -theta.mlp(f)).collect();
    let mut owned = vec![false; m];
    let mut total = 0.0;
    for record in history {
        let expected: Vec<usize> = (0..m).filter(|&e| !owned[e]).collect();
        if expected.is_empty() {
            return Err(bad("rounds continue after every hyperedge is owned"));
        }
        if record.candidates != expected || record.draws.len() != expected.len() {
            return Err(bad("candidates do not match the removal schedule"));
        }
        let any = record.draws.iter().any(|&x| x);
        match record.forced {
            Some(e) if any || e != argmax_phi(&expected, &logits) => {
                return Err(bad("forced hyperedge does not follow the stall rule"))
            }
            None if !any => return Err(bad("a round without successes must force one")),
            _ => {}
        }
        for (&e, &x) in record.candidates.iter().zip(&record.draws) {
            total += bernoulli_log(logits[e], x);
            // d/dF [x log phi + (1 - x) log(1 - phi)] = phi - x.
            let p = sigmoid(logits[e]);
            let scale = p - if x { 1.0 } else { 0.0 };
            theta.accumulate_mlp_grad(&feats[e], scale, &mut grad);
        }
        for e in record.selected() {
            owned[e] = true;
        }
    }
    if owned.iter().any(|o| !o) {
        return Err(bad("history ends with unowned hyperedges"));
    }
    Ok((total, grad))
}

impl Decomposition {
    pub fn node_count(&self) -> usize {
        self.junction_tree.len()
    }

    /// Hyperedges are owned exactly once and components cover every atom.
    pub fn is_partition_of(&self, h: &MolecularHypergraph) -> bool {
        let mut owners = vec![0usize; h.hyperedge_count()];
        let mut covered = vec![false; h.atom_count()];
        for c in &self.components {
            for &e in &c.hyperedges {
                match owners.get_mut(e) {
                    Some(o) => *o += 1,
                    None => return false,
                }
            }
            for &a in &c.atoms {
                match covered.get_mut(a) {
                    Some(x) => *x = true,
                    None => return false,
                }
            }
        }
        owners.iter().all(|&o| o == 1) && covered.iter().all(|&x| x)
    }

    /// Rebuilds the molecule by applying the rules along the junction tree
    /// (breadth-first from node 0). Anchors glue onto atoms already placed
    /// by a fragment sharing them; interior atoms are always fresh.
    pub fn reconstruct(&self) -> Result<MolecularHypergraph, DecompositionError> {
        let bad = DecompositionError::InconsistentAnchor;
        if let Some(atom) = self.lone_atom {
            return Ok(MolecularHypergraph {
                atoms: vec![Atom { index: 0, ..atom }],
                hyperedges: Vec::new(),
            });
        }
        if self.rules.len() != self.junction_tree.len() {
            return Err(bad("one rule per junction-tree node"));
        }
        let mut order = Vec::with_capacity(self.rules.len());
        let mut seen = vec![false; self.rules.len()];
        seen[0] = true;
        let mut queue = VecDeque::from([0]);
        while let Some(v) = queue.pop_front() {
            order.push(v);
            for &w in self.junction_tree.neighbors(v) {
                if !seen[w] {
                    seen[w] = true;
                    queue.push_back(w);
                }
            }
        }
        let mut placed: BTreeMap<usize, usize> = BTreeMap::new();
        let mut atoms: Vec<Atom> = Vec::new();
        let mut hyperedges = Vec::new();
        fn place(
            origin: usize,
            atom: Atom,
            atoms: &mut Vec<Atom>,
            placed: &mut BTreeMap<usize, usize>,
        ) -> usize {
            let id = atoms.len();
            atoms.push(Atom { index: id, ..atom });
            placed.insert(origin, id);
            id
        }
        for &node in &order {
            let rule = &self.rules[node];
            let mut anchor_ids = Vec::with_capacity(rule.anchors.len());
            for anchor in &rule.anchors {
                let id = match placed.get(&anchor.origin) {
                    Some(&id) => {
                        if atoms[id].label() != anchor.atom.label() {
                            return Err(bad("anchor label disagrees with placed atom"));
                        }
                        id
                    }
                    None => place(anchor.origin, anchor.atom, &mut atoms, &mut placed),
                };
                anchor_ids.push(id);
            }
            let mut interior_ids = Vec::with_capacity(rule.rhs_atoms.len());
            for &(origin, atom) in &rule.rhs_atoms {
                if placed.contains_key(&origin) {
                    return Err(bad("interior atom placed twice"));
                }
                interior_ids.push(place(origin, atom, &mut atoms, &mut placed));
            }
            for he in &rule.rhs_hyperedges {
                let members = he
                    .members
                    .iter()
                    .map(|r| match *r {
                        AtomRef::Interior(i) => interior_ids.get(i).copied(),
                        AtomRef::Anchor(i) => anchor_ids.get(i).copied(),
                    })
                    .collect::<Option<Vec<usize>>>()
                    .ok_or(bad("hyperedge references a missing atom"))?;
                let members = match he.kind {
                    HyperedgeKind::Bond(_) => {
                        vec![members[0].min(members[1]), members[0].max(members[1])]
                    }
                    HyperedgeKind::Ring => members,
                };
                hyperedges.push(Hyperedge {
                    members,
                    kind: he.kind,
                });
            }
        }
        Ok(MolecularHypergraph { atoms, hyperedges })
    }
}

/// Independent, reproducible stream for one molecule and one use
/// (`stream` distinguishes epochs, samples, ...).
pub fn molecule_rng(seed: u64, stream: &[u64], mol_id: &str) -> ChaCha8Rng {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    for s in stream {
        hasher.update(s.to_le_bytes());
    }
    hasher.update(mol_id.as_bytes());
    let digest: [u8; 32] = hasher.finalize().into();
    ChaCha8Rng::from_seed(digest)
}
