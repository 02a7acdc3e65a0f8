use std::collections::BTreeSet;

use super::{perceive_rings, Atom, BondOrder, MolecularGraph};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum HyperedgeKind {
    Bond(BondOrder),
    Ring,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Hyperedge {
    /// Atom indices. Ring members are listed in ring-traversal order.
    pub members: Vec<usize>,
    pub kind: HyperedgeKind,
}

impl Hyperedge {
    pub fn is_ring(&self) -> bool {
        matches!(self.kind, HyperedgeKind::Ring)
    }

    pub fn arity(&self) -> usize {
        self.members.len()
    }

    pub fn ring_size(&self) -> Option<usize> {
        self.is_ring().then_some(self.members.len())
    }

    pub fn bond_order(&self) -> Option<BondOrder> {
        match self.kind {
            HyperedgeKind::Bond(o) => Some(o),
            HyperedgeKind::Ring => None,
        }
    }

    pub fn contains(&self, atom: usize) -> bool {
        self.members.contains(&atom)
    }

    /// Atom pairs joined by a chemical bond inside this hyperedge.
    pub fn bonded_pairs(&self) -> Vec<(usize, usize)> {
        match self.kind {
            HyperedgeKind::Bond(_) => vec![(self.members[0], self.members[1])],
            HyperedgeKind::Ring => {
                let k = self.members.len();
                (0..k)
                    .map(|i| (self.members[i], self.members[(i + 1) % k]))
                    .collect()
            }
        }
    }
}

/// Atoms as nodes; bonds outside rings and basis rings as hyperedges.
#[derive(Debug, Clone, PartialEq)]
pub struct MolecularHypergraph {
    pub atoms: Vec<Atom>,
    pub hyperedges: Vec<Hyperedge>,
}

impl MolecularHypergraph {
    pub fn atom_count(&self) -> usize {
        self.atoms.len()
    }

    pub fn hyperedge_count(&self) -> usize {
        self.hyperedges.len()
    }

    pub fn ring_count(&self) -> usize {
        self.hyperedges.iter().filter(|e| e.is_ring()).count()
    }

    /// Hyperedge indices incident to each atom.
    pub fn incidence(&self) -> Vec<Vec<usize>> {
        let mut inc = vec![Vec::new(); self.atoms.len()];
        for (i, e) in self.hyperedges.iter().enumerate() {
            for &a in &e.members {
                inc[a].push(i);
            }
        }
        inc
    }

    /// Atom adjacency induced by bonds, including ring bonds.
    pub fn atom_adjacency(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![BTreeSet::new(); self.atoms.len()];
        for e in &self.hyperedges {
            for (a, b) in e.bonded_pairs() {
                adj[a].insert(b);
                adj[b].insert(a);
            }
        }
        adj.into_iter().map(|s| s.into_iter().collect()).collect()
    }

    pub fn is_connected(&self) -> bool {
        let n = self.atoms.len();
        if n == 0 {
            return false;
        }
        let inc = self.incidence();
        let mut seen = vec![false; n];
        seen[0] = true;
        let mut stack = vec![0];
        let mut count = 1;
        while let Some(v) = stack.pop() {
            for &e in &inc[v] {
                for &w in &self.hyperedges[e].members {
                    if !seen[w] {
                        seen[w] = true;
                        count += 1;
                        stack.push(w);
                    }
                }
            }
        }
        count == n
    }
}

/// Converts a molecular graph to its hypergraph: one ring hyperedge per
/// minimum-cycle-basis ring, one bond hyperedge per bond outside every basis
/// ring. Rings come first, then bonds in input order.
pub fn to_hypergraph(g: &MolecularGraph) -> MolecularHypergraph {
    let rings = perceive_rings(g);
    let mut in_ring = vec![false; g.bonds.len()];
    for ring in &rings {
        let k = ring.atoms.len();
        for i in 0..k {
            if let Some(b) = g.bond_between(ring.atoms[i], ring.atoms[(i + 1) % k]) {
                in_ring[b] = true;
            }
        }
    }
    let mut hyperedges: Vec<Hyperedge> = rings
        .into_iter()
        .map(|r| Hyperedge {
            members: r.atoms,
            kind: HyperedgeKind::Ring,
        })
        .collect();
    for (b, bond) in g.bonds.iter().enumerate() {
        if !in_ring[b] {
            let (x, y) = bond.endpoints;
            hyperedges.push(Hyperedge {
                members: vec![x.min(y), x.max(y)],
                kind: HyperedgeKind::Bond(bond.order),
            });
        }
    }
    MolecularHypergraph {
        atoms: g.atoms.clone(),
        hyperedges,
    }
}
