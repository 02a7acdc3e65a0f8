//! Grammar-induced geometry: every tree derivable by the meta grammar (up to
//! a size cap) is a node, every single production step an edge. Molecules
//! hang off the meta tree isomorphic to their junction tree.

use std::collections::{BTreeMap, BTreeSet, HashMap, VecDeque};
use std::fmt::Write as _;

use serde::Serialize;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::meta_grammar::{derive_children, MetaRuleSet};
use crate::trees::{CanonicalCode, UnorderedTree, MAX_ENUMERATION_SIZE};

const HEADER_PREFIX: &str = "GEOM v1";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GeometryError {
    #[error("max tree size {0} outside 1..={MAX_ENUMERATION_SIZE}")]
    SizeCap(usize),
    #[error("junction tree not covered (size {size}, max degree {max_degree}; geometry has k={k}, max size {max_size})")]
    NotCovered {
        size: usize,
        max_degree: usize,
        k: usize,
        max_size: usize,
    },
    #[error("invalid molecule id {0:?}: must be non-empty without whitespace")]
    InvalidMolId(String),
    #[error("unknown node id {0}")]
    UnknownNode(usize),
    #[error("unsupported geometry file version: {0:?}")]
    Version(String),
    #[error("checksum mismatch: header says {expected}, body hashes to {actual}")]
    Checksum { expected: String, actual: String },
    #[error("edge ({0}, {1}) references a missing node")]
    DanglingEdge(usize, usize),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeKind {
    Root,
    MetaTree,
    MolecularLeaf,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct GeoNode {
    pub id: usize,
    pub kind: NodeKind,
    /// Set for the root and meta trees.
    pub canonical: Option<CanonicalCode>,
    pub tree_size: usize,
    /// Set for molecular leaves.
    pub mol_id: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Geometry {
    nodes: Vec<GeoNode>,
    edges: BTreeSet<(usize, usize)>,
    k: usize,
    max_tree_size: usize,
    meta_count: usize,
    by_code: HashMap<CanonicalCode, usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct GeometryStats {
    pub k: usize,
    pub max_tree_size: usize,
    /// `(tree size, meta node count)`; size 1 is the root.
    pub nodes_per_size: Vec<(usize, usize)>,
    pub meta_tree_count: usize,
    pub node_count_with_root: usize,
    /// Meta-to-meta edges, counting the root edge.
    pub edge_count: usize,
    pub edge_count_without_root: usize,
    pub leaf_count: usize,
}

/// BFS from the start symbol. Level `n` holds the trees of size `n`; new
/// trees on a level get ids in canonical-code order. Every (rule, site)
/// application whose result fits under the cap adds an edge, whether the
/// child is new or already known.
pub fn build_meta_geometry(
    rules: &MetaRuleSet,
    max_tree_size: usize,
) -> Result<Geometry, GeometryError> {
    if !(1..=MAX_ENUMERATION_SIZE).contains(&max_tree_size) {
        return Err(GeometryError::SizeCap(max_tree_size));
    }
    let root = UnorderedTree::single();
    let root_code = root.canonical_code();
    let mut nodes = vec![GeoNode {
        id: 0,
        kind: NodeKind::Root,
        canonical: Some(root_code.clone()),
        tree_size: 1,
        mol_id: None,
    }];
    let mut by_code = HashMap::from([(root_code, 0)]);
    let mut edges = BTreeSet::new();
    let mut frontier = vec![(0usize, root)];
    for _size in 1..max_tree_size {
        let mut found: BTreeMap<CanonicalCode, UnorderedTree> = BTreeMap::new();
        let mut links = Vec::new();
        for (parent, tree) in &frontier {
            for (_, _, child) in derive_children(rules, tree) {
                let code = child.canonical_code();
                links.push((*parent, code.clone()));
                found.entry(code).or_insert(child);
            }
        }
        let mut next = Vec::with_capacity(found.len());
        for (code, tree) in found {
            let id = nodes.len();
            nodes.push(GeoNode {
                id,
                kind: NodeKind::MetaTree,
                canonical: Some(code.clone()),
                tree_size: tree.len(),
                mol_id: None,
            });
            by_code.insert(code, id);
            next.push((id, tree));
        }
        for (parent, code) in links {
            edges.insert((parent, by_code[&code]));
        }
        frontier = next;
    }
    let meta_count = nodes.len();
    Ok(Geometry {
        nodes,
        edges,
        k: rules.k,
        max_tree_size,
        meta_count,
        by_code,
    })
}

impl Geometry {
    pub fn k(&self) -> usize {
        self.k
    }

    pub fn max_tree_size(&self) -> usize {
        self.max_tree_size
    }

    pub fn root(&self) -> usize {
        0
    }

    pub fn nodes(&self) -> &[GeoNode] {
        &self.nodes
    }

    pub fn node(&self, id: usize) -> Result<&GeoNode, GeometryError> {
        self.nodes.get(id).ok_or(GeometryError::UnknownNode(id))
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    /// Root and meta-tree nodes; they occupy ids `0..meta_count`.
    pub fn meta_nodes(&self) -> impl Iterator<Item = &GeoNode> {
        self.nodes[..self.meta_count].iter()
    }

    pub fn meta_count(&self) -> usize {
        self.meta_count
    }

    pub fn leaves(&self) -> impl Iterator<Item = &GeoNode> {
        self.nodes[self.meta_count..].iter()
    }

    pub fn edges(&self) -> &BTreeSet<(usize, usize)> {
        &self.edges
    }

    pub fn meta_id(&self, code: &CanonicalCode) -> Option<usize> {
        self.by_code.get(code).copied()
    }

    /// Sorted neighbor lists per node.
    pub fn adjacency(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.nodes.len()];
        for &(a, b) in &self.edges {
            adj[a].push(b);
            adj[b].push(a);
        }
        for list in &mut adj {
            list.sort_unstable();
        }
        adj
    }

    /// Attaches a molecule whose junction tree is `jt` to the isomorphic meta
    /// tree (the root for a single-node junction tree).
    pub fn attach_leaf(&mut self, jt: &UnorderedTree, mol_id: &str) -> Result<usize, GeometryError> {
        if mol_id.is_empty() || mol_id.chars().any(char::is_whitespace) {
            return Err(GeometryError::InvalidMolId(mol_id.to_string()));
        }
        let meta = self
            .meta_id(&jt.canonical_code())
            .ok_or(GeometryError::NotCovered {
                size: jt.len(),
                max_degree: jt.max_degree(),
                k: self.k,
                max_size: self.max_tree_size,
            })?;
        let id = self.nodes.len();
        self.nodes.push(GeoNode {
            id,
            kind: NodeKind::MolecularLeaf,
            canonical: None,
            tree_size: jt.len(),
            mol_id: Some(mol_id.to_string()),
        });
        self.edges.insert((meta, id));
        Ok(id)
    }

    /// Meta node a leaf hangs from.
    pub fn leaf_parent(&self, leaf: usize) -> Result<usize, GeometryError> {
        if leaf < self.meta_count || leaf >= self.nodes.len() {
            return Err(GeometryError::UnknownNode(leaf));
        }
        self.edges
            .iter()
            .find(|&&(_, b)| b == leaf)
            .map(|&(a, _)| a)
            .ok_or(GeometryError::UnknownNode(leaf))
    }

    /// Drops every molecular leaf, keeping the meta geometry.
    pub fn clear_leaves(&mut self) {
        self.nodes.truncate(self.meta_count);
        let meta_count = self.meta_count;
        self.edges.retain(|&(_, b)| b < meta_count);
    }

    /// Unit-weight BFS distance.
    pub fn shortest_path(&self, a: usize, b: usize) -> Result<usize, GeometryError> {
        self.node(a)?;
        self.node(b)?;
        let adj = self.adjacency();
        let mut dist = vec![usize::MAX; self.nodes.len()];
        dist[a] = 0;
        let mut queue = VecDeque::from([a]);
        while let Some(v) = queue.pop_front() {
            if v == b {
                return Ok(dist[v]);
            }
            for &w in &adj[v] {
                if dist[w] == usize::MAX {
                    dist[w] = dist[v] + 1;
                    queue.push_back(w);
                }
            }
        }
        unreachable!("geometry is connected")
    }

    pub fn stats(&self) -> GeometryStats {
        let mut per_size: BTreeMap<usize, usize> = BTreeMap::new();
        for n in self.meta_nodes() {
            *per_size.entry(n.tree_size).or_default() += 1;
        }
        let meta_edges = self
            .edges
            .iter()
            .filter(|&&(_, b)| b < self.meta_count)
            .count();
        let root_edges = self
            .edges
            .iter()
            .filter(|&&(a, b)| a == 0 && b < self.meta_count)
            .count();
        GeometryStats {
            k: self.k,
            max_tree_size: self.max_tree_size,
            nodes_per_size: per_size.into_iter().collect(),
            meta_tree_count: self.meta_count - 1,
            node_count_with_root: self.meta_count,
            edge_count: meta_edges,
            edge_count_without_root: meta_edges - root_edges,
            leaf_count: self.nodes.len() - self.meta_count,
        }
    }

    fn body(&self, leaves: bool) -> String {
        let mut out = String::new();
        for n in self.meta_nodes() {
            let kind = match n.kind {
                NodeKind::Root => "root",
                _ => "meta_tree",
            };
            let code = n.canonical.as_ref().expect("meta nodes carry codes");
            writeln!(out, "N {} {} {} {}", n.id, kind, n.tree_size, code).unwrap();
        }
        if leaves {
            for n in self.leaves() {
                let parent = self.leaf_parent(n.id).expect("leaf has an edge");
                let mol = n.mol_id.as_deref().expect("leaves carry ids");
                writeln!(out, "L {} {} {}", n.id, parent, mol).unwrap();
            }
        }
        for &(a, b) in &self.edges {
            if leaves || b < self.meta_count {
                writeln!(out, "E {a} {b}").unwrap();
            }
        }
        out
    }

    /// SHA-256 of the serialized body, leaves included.
    pub fn checksum(&self) -> String {
        sha256_hex(self.body(true).as_bytes())
    }

    /// SHA-256 of the meta part only; unaffected by leaf attachment.
    pub fn meta_checksum(&self) -> String {
        sha256_hex(self.body(false).as_bytes())
    }

    pub fn serialize(&self) -> String {
        let body = self.body(true);
        format!(
            "{HEADER_PREFIX} k={} max_size={} checksum={}\n{body}",
            self.k,
            self.max_tree_size,
            sha256_hex(body.as_bytes())
        )
    }

    pub fn deserialize(text: &str) -> Result<Self, GeometryError> {
        let (header, body) = text.split_once('\n').unwrap_or((text, ""));
        let fields = header
            .strip_prefix(HEADER_PREFIX)
            .and_then(|rest| rest.strip_prefix(' '))
            .ok_or_else(|| GeometryError::Version(header.chars().take(16).collect()))?;
        let parse_err = |line: usize, message: &str| GeometryError::Parse {
            line,
            message: message.to_string(),
        };
        let mut k = None;
        let mut max_size = None;
        let mut checksum = None;
        for f in fields.split(' ') {
            match f.split_once('=') {
                Some(("k", v)) => k = v.parse::<usize>().ok(),
                Some(("max_size", v)) => max_size = v.parse::<usize>().ok(),
                Some(("checksum", v)) => checksum = Some(v.to_string()),
                _ => return Err(parse_err(1, "unknown header field")),
            }
        }
        let (k, max_tree_size, expected) = match (k, max_size, checksum) {
            (Some(k), Some(m), Some(c)) => (k, m, c),
            _ => return Err(parse_err(1, "header needs k, max_size and checksum")),
        };
        let actual = sha256_hex(body.as_bytes());
        if actual != expected {
            return Err(GeometryError::Checksum { expected, actual });
        }

        let mut nodes: Vec<GeoNode> = Vec::new();
        let mut leaf_parents = Vec::new();
        let mut edges = BTreeSet::new();
        for (i, line) in body.lines().enumerate() {
            let lineno = i + 2;
            let parts: Vec<&str> = line.split(' ').collect();
            let num = |s: &str| s.parse::<usize>().map_err(|_| parse_err(lineno, "bad integer"));
            match parts.as_slice() {
                ["N", id, kind, size, code] => {
                    let id = num(id)?;
                    if id != nodes.len() {
                        return Err(parse_err(lineno, "node ids must be consecutive"));
                    }
                    let kind = match (*kind, id) {
                        ("root", 0) => NodeKind::Root,
                        ("meta_tree", 1..) => NodeKind::MetaTree,
                        _ => return Err(parse_err(lineno, "bad node kind")),
                    };
                    let code = CanonicalCode::from_hex(code)
                        .map_err(|e| parse_err(lineno, &e.to_string()))?;
                    let tree_size = num(size)?;
                    if code.tree_size() != tree_size {
                        return Err(parse_err(lineno, "size disagrees with code"));
                    }
                    nodes.push(GeoNode {
                        id,
                        kind,
                        canonical: Some(code),
                        tree_size,
                        mol_id: None,
                    });
                }
                ["L", id, meta, mol] => {
                    let id = num(id)?;
                    let meta = num(meta)?;
                    if id != nodes.len() {
                        return Err(parse_err(lineno, "node ids must be consecutive"));
                    }
                    let parent = nodes
                        .get(meta)
                        .filter(|n| n.kind != NodeKind::MolecularLeaf)
                        .ok_or(GeometryError::DanglingEdge(meta, id))?;
                    nodes.push(GeoNode {
                        id,
                        kind: NodeKind::MolecularLeaf,
                        canonical: None,
                        tree_size: parent.tree_size,
                        mol_id: Some((*mol).to_string()),
                    });
                    leaf_parents.push((meta, id));
                }
                ["E", a, b] => {
                    let (a, b) = (num(a)?, num(b)?);
                    if a >= b {
                        return Err(parse_err(lineno, "edge ids must be ascending"));
                    }
                    edges.insert((a, b));
                }
                _ => return Err(parse_err(lineno, "unrecognized line")),
            }
        }
        if nodes.first().map(|n| n.kind) != Some(NodeKind::Root) {
            return Err(parse_err(2, "missing root node"));
        }
        if let Some(&(a, b)) = edges.iter().find(|&&(_, b)| b >= nodes.len()) {
            return Err(GeometryError::DanglingEdge(a, b));
        }
        for &(meta, leaf) in &leaf_parents {
            if !edges.contains(&(meta, leaf)) {
                return Err(parse_err(0, "leaf line without matching edge"));
            }
        }
        let meta_count = nodes
            .iter()
            .position(|n| n.kind == NodeKind::MolecularLeaf)
            .unwrap_or(nodes.len());
        if nodes[meta_count..]
            .iter()
            .any(|n| n.kind != NodeKind::MolecularLeaf)
        {
            return Err(parse_err(0, "meta nodes must precede leaves"));
        }
        let by_code = nodes[..meta_count]
            .iter()
            .map(|n| (n.canonical.clone().expect("meta node"), n.id))
            .collect();
        Ok(Geometry {
            nodes,
            edges,
            k,
            max_tree_size,
            meta_count,
            by_code,
        })
    }
}

fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}
