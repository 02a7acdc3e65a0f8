//! Vertex- and edge-labeled graph isomorphism by color refinement followed
//! by backtracking. Hypergraphs are compared through their atom/hyperedge
//! incidence graphs.

use std::collections::BTreeMap;
use std::hash::{Hash, Hasher};

use super::{Element, HyperedgeKind, MolecularGraph, MolecularHypergraph};

/// Small undirected graph with `u64` vertex and edge labels. Edge label 0 is
/// reserved for "no edge".
#[derive(Debug, Clone)]
pub struct LabeledGraph {
    labels: Vec<u64>,
    adj: Vec<Vec<(usize, u64)>>,
}

impl LabeledGraph {
    pub fn new(labels: Vec<u64>) -> Self {
        let n = labels.len();
        Self {
            labels,
            adj: vec![Vec::new(); n],
        }
    }

    pub fn add_edge(&mut self, a: usize, b: usize, label: u64) {
        assert!(label != 0, "edge label 0 is reserved");
        self.adj[a].push((b, label));
        self.adj[b].push((a, label));
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    fn matrix(&self) -> Vec<u64> {
        let n = self.len();
        let mut m = vec![0u64; n * n];
        for (v, list) in self.adj.iter().enumerate() {
            for &(w, l) in list {
                m[v * n + w] = l;
            }
        }
        m
    }

    pub fn is_isomorphic(&self, other: &LabeledGraph) -> bool {
        if self.len() != other.len() {
            return false;
        }
        let edges = |g: &LabeledGraph| g.adj.iter().map(Vec::len).sum::<usize>();
        if edges(self) != edges(other) {
            return false;
        }
        let (ca, cb) = refine_colors(self, other);
        let histogram = |c: &[usize]| {
            let mut h = BTreeMap::new();
            for &x in c {
                *h.entry(x).or_insert(0usize) += 1;
            }
            h
        };
        if histogram(&ca) != histogram(&cb) {
            return false;
        }
        Matcher::new(self, other, ca, cb).run()
    }
}

/// Joint color refinement of two graphs so colors are comparable.
fn refine_colors(a: &LabeledGraph, b: &LabeledGraph) -> (Vec<usize>, Vec<usize>) {
    let mut palette: BTreeMap<(usize, Vec<(u64, usize)>), usize> = BTreeMap::new();
    let mut intern = |key: (usize, Vec<(u64, usize)>)| {
        let next = palette.len();
        *palette.entry(key).or_insert(next)
    };
    let init: BTreeMap<u64, usize> = a
        .labels
        .iter()
        .chain(&b.labels)
        .copied()
        .collect::<std::collections::BTreeSet<_>>()
        .into_iter()
        .enumerate()
        .map(|(i, l)| (l, i))
        .collect();
    let mut ca: Vec<usize> = a.labels.iter().map(|l| init[l]).collect();
    let mut cb: Vec<usize> = b.labels.iter().map(|l| init[l]).collect();
    let classes = |c: &[usize], d: &[usize]| {
        c.iter()
            .chain(d)
            .collect::<std::collections::BTreeSet<_>>()
            .len()
    };
    let mut count = classes(&ca, &cb);
    loop {
        let step = |g: &LabeledGraph, c: &[usize], intern: &mut dyn FnMut(_) -> usize| {
            (0..g.len())
                .map(|v| {
                    let mut sig: Vec<(u64, usize)> =
                        g.adj[v].iter().map(|&(w, l)| (l, c[w])).collect();
                    sig.sort_unstable();
                    intern((c[v], sig))
                })
                .collect::<Vec<_>>()
        };
        let na = step(a, &ca, &mut intern);
        let nb = step(b, &cb, &mut intern);
        let next = classes(&na, &nb);
        ca = na;
        cb = nb;
        if next == count {
            break;
        }
        count = next;
    }
    (ca, cb)
}

struct Matcher<'a> {
    a: &'a LabeledGraph,
    mb: Vec<u64>,
    ma: Vec<u64>,
    ca: Vec<usize>,
    cb: Vec<usize>,
    order: Vec<usize>,
    map: Vec<usize>,
    used: Vec<bool>,
}

impl<'a> Matcher<'a> {
    fn new(a: &'a LabeledGraph, b: &LabeledGraph, ca: Vec<usize>, cb: Vec<usize>) -> Self {
        let n = a.len();
        // Visit vertices in BFS order, starting each component at the
        // vertex whose color class is rarest.
        let mut class_size: BTreeMap<usize, usize> = BTreeMap::new();
        for &c in &ca {
            *class_size.entry(c).or_default() += 1;
        }
        let mut starts: Vec<usize> = (0..n).collect();
        starts.sort_by_key(|&v| (class_size[&ca[v]], v));
        let mut order = Vec::with_capacity(n);
        let mut seen = vec![false; n];
        for s in starts {
            if seen[s] {
                continue;
            }
            seen[s] = true;
            let mut queue = std::collections::VecDeque::from([s]);
            while let Some(v) = queue.pop_front() {
                order.push(v);
                let mut next: Vec<usize> = a.adj[v].iter().map(|&(w, _)| w).collect();
                next.sort_by_key(|&w| (class_size[&ca[w]], w));
                for w in next {
                    if !seen[w] {
                        seen[w] = true;
                        queue.push_back(w);
                    }
                }
            }
        }
        Self {
            a,
            ma: a.matrix(),
            mb: b.matrix(),
            ca,
            cb,
            order,
            map: vec![usize::MAX; n],
            used: vec![false; n],
        }
    }

    fn run(&mut self) -> bool {
        self.extend(0)
    }

    fn extend(&mut self, depth: usize) -> bool {
        let n = self.a.len();
        if depth == n {
            return true;
        }
        let v = self.order[depth];
        for w in 0..n {
            if self.used[w] || self.cb[w] != self.ca[v] || !self.consistent(v, w, depth) {
                continue;
            }
            self.map[v] = w;
            self.used[w] = true;
            if self.extend(depth + 1) {
                return true;
            }
            self.used[w] = false;
            self.map[v] = usize::MAX;
        }
        false
    }

    fn consistent(&self, v: usize, w: usize, depth: usize) -> bool {
        let n = self.a.len();
        self.order[..depth].iter().all(|&u| {
            let x = self.map[u];
            self.ma[v * n + u] == self.mb[w * n + x]
        })
    }
}

fn stable_hash<T: Hash>(value: &T) -> u64 {
    // SipHash with fixed keys: stable within a build, which is all the
    // labels need.
    let mut h = std::collections::hash_map::DefaultHasher::new();
    value.hash(&mut h);
    h.finish() | 1
}

fn atom_key(e: Element, aromatic: bool, charge: i8) -> u64 {
    stable_hash(&("atom", e, aromatic, charge))
}

fn molecular_labeled_graph(g: &MolecularGraph) -> LabeledGraph {
    let mut lg = LabeledGraph::new(
        g.atoms
            .iter()
            .map(|a| atom_key(a.element, a.aromatic, a.formal_charge))
            .collect(),
    );
    for b in &g.bonds {
        lg.add_edge(
            b.endpoints.0,
            b.endpoints.1,
            b.order.one_hot_index() as u64 + 1,
        );
    }
    lg
}

fn incidence_graph(h: &MolecularHypergraph) -> LabeledGraph {
    let n = h.atoms.len();
    let mut labels: Vec<u64> = h
        .atoms
        .iter()
        .map(|a| atom_key(a.element, a.aromatic, a.formal_charge))
        .collect();
    labels.extend(h.hyperedges.iter().map(|e| match e.kind {
        HyperedgeKind::Bond(order) => stable_hash(&("bond", order)),
        HyperedgeKind::Ring => stable_hash(&("ring", e.members.len())),
    }));
    let mut lg = LabeledGraph::new(labels);
    for (i, e) in h.hyperedges.iter().enumerate() {
        for &m in &e.members {
            lg.add_edge(m, n + i, 1);
        }
    }
    lg
}

type Invariant = (Vec<(Element, bool, i8)>, Vec<(bool, usize)>);

/// Multiset summary used to reject non-isomorphic pairs before search.
fn invariant_hash(h: &MolecularHypergraph) -> Invariant {
    let mut atoms: Vec<_> = h.atoms.iter().map(|a| a.label()).collect();
    atoms.sort_unstable();
    let mut arities: Vec<_> = h
        .hyperedges
        .iter()
        .map(|e| (e.is_ring(), e.members.len()))
        .collect();
    arities.sort_unstable();
    (atoms, arities)
}

/// True iff some atom bijection preserves atom labels and hyperedge
/// structure (kind, bond order, membership).
pub fn hypergraph_isomorphic(h1: &MolecularHypergraph, h2: &MolecularHypergraph) -> bool {
    if invariant_hash(h1) != invariant_hash(h2) {
        return false;
    }
    incidence_graph(h1).is_isomorphic(&incidence_graph(h2))
}

/// Isomorphism of heavy-atom graphs preserving atom labels and bond orders.
pub fn graphs_isomorphic(g1: &MolecularGraph, g2: &MolecularGraph) -> bool {
    molecular_labeled_graph(g1).is_isomorphic(&molecular_labeled_graph(g2))
}
