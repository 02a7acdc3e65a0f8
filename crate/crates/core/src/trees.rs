//! Unrooted, unordered trees with homogeneous labels: canonical codes,
//! isomorphism, exhaustive enumeration, and one-step insertions.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

/// Largest tree size accepted by [`enumerate_free_trees`].
pub const MAX_ENUMERATION_SIZE: usize = 12;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TreeError {
    #[error("a tree needs at least one node")]
    Empty,
    #[error("edge ({0}, {1}) references a missing node")]
    NodeOutOfRange(usize, usize),
    #[error("self-loop at node {0}")]
    SelfLoop(usize),
    #[error("not a tree: {0}")]
    NotATree(&'static str),
    #[error("enumeration size {0} outside 1..={MAX_ENUMERATION_SIZE}")]
    EnumerationSize(usize),
    #[error("degree bound must be at least 1")]
    DegreeBound,
    #[error("TED-1 check needs |small| < |large| (got {0} and {1})")]
    SizeOrder(usize, usize),
    #[error("malformed canonical code: {0}")]
    BadCode(&'static str),
}

/// Connected acyclic undirected graph; all nodes carry the same label.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UnorderedTree {
    adj: Vec<Vec<usize>>,
}

impl UnorderedTree {
    pub fn single() -> Self {
        Self { adj: vec![vec![]] }
    }

    pub fn from_edges(n: usize, edges: &[(usize, usize)]) -> Result<Self, TreeError> {
        if n == 0 {
            return Err(TreeError::Empty);
        }
        if edges.len() + 1 != n {
            return Err(TreeError::NotATree("edge count must be n - 1"));
        }
        let mut adj = vec![Vec::new(); n];
        for &(a, b) in edges {
            if a >= n || b >= n {
                return Err(TreeError::NodeOutOfRange(a, b));
            }
            if a == b {
                return Err(TreeError::SelfLoop(a));
            }
            adj[a].push(b);
            adj[b].push(a);
        }
        for list in &mut adj {
            list.sort_unstable();
            if list.windows(2).any(|w| w[0] == w[1]) {
                return Err(TreeError::NotATree("parallel edges"));
            }
        }
        let tree = Self { adj };
        if !tree.is_connected() {
            return Err(TreeError::NotATree("disconnected"));
        }
        Ok(tree)
    }

    /// Path on `n` nodes.
    pub fn path(n: usize) -> Self {
        let edges: Vec<_> = (1..n).map(|i| (i - 1, i)).collect();
        Self::from_edges(n, &edges).expect("path is a tree")
    }

    /// Star with one center and `leaves` leaves.
    pub fn star(leaves: usize) -> Self {
        let edges: Vec<_> = (1..=leaves).map(|i| (0, i)).collect();
        Self::from_edges(leaves + 1, &edges).expect("star is a tree")
    }

    pub fn len(&self) -> usize {
        self.adj.len()
    }

    pub fn is_empty(&self) -> bool {
        self.adj.is_empty()
    }

    pub fn neighbors(&self, v: usize) -> &[usize] {
        &self.adj[v]
    }

    pub fn degree(&self, v: usize) -> usize {
        self.adj[v].len()
    }

    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::with_capacity(self.len().saturating_sub(1));
        for (v, list) in self.adj.iter().enumerate() {
            for &w in list {
                if v < w {
                    out.push((v, w));
                }
            }
        }
        out
    }

    /// Maximum node degree; 0 for a single node.
    pub fn max_degree(&self) -> usize {
        self.adj.iter().map(Vec::len).max().unwrap_or(0)
    }

    pub fn canonical_code(&self) -> CanonicalCode {
        canonical_code(self)
    }

    /// Relabels nodes: node `v` becomes `perm[v]`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        let edges: Vec<_> = self
            .edges()
            .iter()
            .map(|&(a, b)| (perm[a], perm[b]))
            .collect();
        Self::from_edges(self.len(), &edges).expect("permutation preserves tree shape")
    }

    /// Adds node `v'` adjacent to `v` and moves the neighbors in `moved`
    /// from `v` to `v'`.
    pub fn with_insertion(&self, v: usize, moved: &[usize]) -> Self {
        let fresh = self.len();
        let mut edges = Vec::with_capacity(self.len());
        for (a, b) in self.edges() {
            let touches = |x: usize, y: usize| x == v && moved.contains(&y);
            if touches(a, b) {
                edges.push((fresh, b));
            } else if touches(b, a) {
                edges.push((a, fresh));
            } else {
                edges.push((a, b));
            }
        }
        edges.push((v, fresh));
        Self::from_edges(self.len() + 1, &edges).expect("insertion keeps a tree")
    }

    fn is_connected(&self) -> bool {
        let mut seen = vec![false; self.len()];
        seen[0] = true;
        let mut stack = vec![0];
        let mut count = 1;
        while let Some(v) = stack.pop() {
            for &w in &self.adj[v] {
                if !seen[w] {
                    seen[w] = true;
                    count += 1;
                    stack.push(w);
                }
            }
        }
        count == self.len()
    }

    /// Nodes minimizing the largest remaining component when removed.
    pub fn centroids(&self) -> Vec<usize> {
        let n = self.len();
        let mut parent = vec![usize::MAX; n];
        let mut order = Vec::with_capacity(n);
        let mut stack = vec![0];
        let mut seen = vec![false; n];
        seen[0] = true;
        while let Some(v) = stack.pop() {
            order.push(v);
            for &w in &self.adj[v] {
                if !seen[w] {
                    seen[w] = true;
                    parent[w] = v;
                    stack.push(w);
                }
            }
        }
        let mut size = vec![1usize; n];
        for &v in order.iter().rev() {
            if parent[v] != usize::MAX {
                size[parent[v]] += size[v];
            }
        }
        let heaviest: Vec<usize> = (0..n)
            .map(|v| {
                let down = self.adj[v]
                    .iter()
                    .filter(|&&w| parent[w] == v)
                    .map(|&w| size[w])
                    .max()
                    .unwrap_or(0);
                down.max(n - size[v])
            })
            .collect();
        let best = *heaviest.iter().min().expect("non-empty tree");
        (0..n).filter(|&v| heaviest[v] == best).collect()
    }
}

/// Exact isomorphism key of an [`UnorderedTree`].
///
/// Layout: two big-endian bytes of node count, then the AHU parenthesis
/// string of the tree rooted at its centroid packed MSB-first (`(` = 1,
/// `)` = 0). Byte order gives a total order: by size, then by code.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct CanonicalCode(Vec<u8>);

impl CanonicalCode {
    pub fn as_bytes(&self) -> &[u8] {
        &self.0
    }

    pub fn tree_size(&self) -> usize {
        usize::from(u16::from_be_bytes([self.0[0], self.0[1]]))
    }

    pub fn to_hex(&self) -> String {
        self.0.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn from_hex(hex: &str) -> Result<Self, TreeError> {
        if !hex.len().is_multiple_of(2) || hex.len() < 6 {
            return Err(TreeError::BadCode("hex length"));
        }
        let bytes = (0..hex.len())
            .step_by(2)
            .map(|i| u8::from_str_radix(&hex[i..i + 2], 16))
            .collect::<Result<Vec<_>, _>>()
            .map_err(|_| TreeError::BadCode("not hex"))?;
        let code = CanonicalCode(bytes);
        // Decoding validates the structure; re-encoding rejects
        // non-canonical strings.
        let tree = code.to_tree()?;
        if tree.canonical_code() != code {
            return Err(TreeError::BadCode("not canonical"));
        }
        Ok(code)
    }

    /// Rebuilds a tree with this code.
    pub fn to_tree(&self) -> Result<UnorderedTree, TreeError> {
        if self.0.len() < 3 {
            return Err(TreeError::BadCode("too short"));
        }
        let n = self.tree_size();
        if n == 0 || self.0.len() != 2 + (2 * n).div_ceil(8) {
            return Err(TreeError::BadCode("length does not match node count"));
        }
        let bit = |i: usize| self.0[2 + i / 8] >> (7 - i % 8) & 1 == 1;
        let mut edges = Vec::with_capacity(n - 1);
        let mut stack: Vec<usize> = Vec::new();
        let mut created = 0;
        for i in 0..2 * n {
            if bit(i) {
                if created == n || (created > 0 && stack.is_empty()) {
                    return Err(TreeError::BadCode("unbalanced"));
                }
                if let Some(&p) = stack.last() {
                    edges.push((p, created));
                }
                stack.push(created);
                created += 1;
            } else if stack.pop().is_none() {
                return Err(TreeError::BadCode("unbalanced"));
            }
        }
        if created != n || !stack.is_empty() {
            return Err(TreeError::BadCode("unbalanced"));
        }
        let padding = (2 * n..8 * (self.0.len() - 2)).any(bit);
        if padding {
            return Err(TreeError::BadCode("non-zero padding"));
        }
        UnorderedTree::from_edges(n, &edges)
    }
}

impl fmt::Display for CanonicalCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

impl Serialize for CanonicalCode {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_hex())
    }
}

impl<'de> Deserialize<'de> for CanonicalCode {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        CanonicalCode::from_hex(&s).map_err(serde::de::Error::custom)
    }
}

fn rooted_code(t: &UnorderedTree, v: usize, parent: usize, out: &mut Vec<bool>) {
    let mut kids: Vec<Vec<bool>> = t
        .neighbors(v)
        .iter()
        .filter(|&&w| w != parent)
        .map(|&w| {
            let mut c = Vec::new();
            rooted_code(t, w, v, &mut c);
            c
        })
        .collect();
    kids.sort_unstable();
    out.push(true);
    for k in kids {
        out.extend(k);
    }
    out.push(false);
}

/// AHU code at the centroid; for two centroids the smaller code wins.
pub fn canonical_code(t: &UnorderedTree) -> CanonicalCode {
    let best = t
        .centroids()
        .into_iter()
        .map(|c| {
            let mut bits = Vec::with_capacity(2 * t.len());
            rooted_code(t, c, usize::MAX, &mut bits);
            bits
        })
        .min()
        .expect("tree has a centroid");
    let n = u16::try_from(t.len()).expect("tree size fits in u16");
    let mut bytes = n.to_be_bytes().to_vec();
    bytes.resize(2 + best.len().div_ceil(8), 0);
    for (i, b) in best.iter().enumerate() {
        if *b {
            bytes[2 + i / 8] |= 1 << (7 - i % 8);
        }
    }
    CanonicalCode(bytes)
}

pub fn trees_isomorphic(t1: &UnorderedTree, t2: &UnorderedTree) -> bool {
    t1.len() == t2.len() && canonical_code(t1) == canonical_code(t2)
}

/// All pairwise non-isomorphic trees of size `1..=n_max` with maximum degree
/// at most `k` (`None` = unbounded). Entry `i` holds the trees of size
/// `i + 1`, sorted by canonical code.
pub fn enumerate_free_trees(
    n_max: usize,
    k: Option<usize>,
) -> Result<Vec<Vec<UnorderedTree>>, TreeError> {
    if !(1..=MAX_ENUMERATION_SIZE).contains(&n_max) {
        return Err(TreeError::EnumerationSize(n_max));
    }
    if k == Some(0) {
        return Err(TreeError::DegreeBound);
    }
    let bound = k.unwrap_or(usize::MAX);
    let mut levels = vec![vec![UnorderedTree::single()]];
    // Removing a leaf never raises the maximum degree, so every bounded tree
    // of size n + 1 extends some bounded tree of size n.
    for _ in 1..n_max {
        let mut next: BTreeMap<CanonicalCode, UnorderedTree> = BTreeMap::new();
        for t in levels.last().expect("non-empty") {
            for v in 0..t.len() {
                if t.degree(v) + 1 > bound {
                    continue;
                }
                let child = t.with_insertion(v, &[]);
                next.entry(child.canonical_code()).or_insert(child);
            }
        }
        levels.push(next.into_values().collect());
    }
    Ok(levels)
}

/// Every tree reachable by one insertion: pick node `v` and a subset `S` of
/// its neighbors, add `v'` adjacent to `v`, and move `S` from `v` to `v'`.
/// Results with maximum degree above `k` are dropped.
pub fn one_step_insertions(t: &UnorderedTree, k: Option<usize>) -> BTreeSet<CanonicalCode> {
    let bound = k.unwrap_or(usize::MAX);
    let mut out = BTreeSet::new();
    for v in 0..t.len() {
        let nbrs = t.neighbors(v);
        let m = nbrs.len();
        for mask in 0u64..(1u64 << m) {
            let moved: Vec<usize> = (0..m)
                .filter(|i| mask >> i & 1 == 1)
                .map(|i| nbrs[i])
                .collect();
            let s = moved.len();
            // Degrees after the move: v keeps m - s + 1, v' gets s + 1.
            if (m - s + 1).max(s + 1) > bound || t.max_degree() > bound {
                continue;
            }
            out.insert(t.with_insertion(v, &moved).canonical_code());
        }
    }
    out
}

/// TED(small, large) = 1 for homogeneous-label trees whose sizes differ by
/// one: `large` is a single insertion away from `small`.
pub fn ted_one(small: &UnorderedTree, large: &UnorderedTree) -> Result<bool, TreeError> {
    if small.len() >= large.len() {
        return Err(TreeError::SizeOrder(small.len(), large.len()));
    }
    if large.len() != small.len() + 1 {
        return Ok(false);
    }
    Ok(one_step_insertions(small, None).contains(&large.canonical_code()))
}
