//! Minimum cycle basis via Horton's candidate set and GF(2) elimination.

use std::collections::{BTreeSet, VecDeque};

use super::MolecularGraph;

/// A basis cycle, atoms listed in traversal order starting from the
/// smallest index and heading toward its smaller neighbor.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Ring {
    pub atoms: Vec<usize>,
}

impl Ring {
    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    pub fn atom_set(&self) -> BTreeSet<usize> {
        self.atoms.iter().copied().collect()
    }

    fn sorted_atoms(&self) -> Vec<usize> {
        let mut v = self.atoms.clone();
        v.sort_unstable();
        v
    }
}

#[derive(Clone)]
struct EdgeSet(Vec<u64>);

impl EdgeSet {
    fn new(edges: usize) -> Self {
        Self(vec![0; edges.div_ceil(64)])
    }
    fn set(&mut self, i: usize) {
        self.0[i / 64] ^= 1 << (i % 64);
    }
    fn get(&self, i: usize) -> bool {
        self.0[i / 64] >> (i % 64) & 1 == 1
    }
    fn xor(&mut self, other: &EdgeSet) {
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            *a ^= b;
        }
    }
    fn lowest(&self) -> Option<usize> {
        self.0
            .iter()
            .enumerate()
            .find(|(_, w)| **w != 0)
            .map(|(i, w)| i * 64 + w.trailing_zeros() as usize)
    }
}

fn normalize_cycle(mut cycle: Vec<usize>) -> Vec<usize> {
    let start = (0..cycle.len()).min_by_key(|&i| cycle[i]).unwrap_or(0);
    cycle.rotate_left(start);
    if cycle.len() > 2 && cycle[cycle.len() - 1] < cycle[1] {
        cycle[1..].reverse();
    }
    cycle
}

/// Returns a minimum cycle basis of `g`, ordered by ring size and then by
/// the sorted atom lists.
pub fn perceive_rings(g: &MolecularGraph) -> Vec<Ring> {
    let n = g.atoms.len();
    let m = g.bonds.len();
    if n == 0 {
        return Vec::new();
    }
    let dimension = (m + components(g)).saturating_sub(n);
    if dimension == 0 {
        return Vec::new();
    }
    let adj = g.adjacency();

    // Horton candidates: for every root v and bond (x, y), the cycle
    // P(v, x) + (x, y) + P(y, v) when the two shortest paths meet only at v.
    let mut candidates: Vec<(Vec<usize>, EdgeSet)> = Vec::new();
    let mut seen_sets: BTreeSet<Vec<u64>> = BTreeSet::new();
    for v in 0..n {
        let mut parent = vec![usize::MAX; n];
        let mut parent_bond = vec![usize::MAX; n];
        let mut dist = vec![usize::MAX; n];
        dist[v] = 0;
        let mut queue = VecDeque::from([v]);
        while let Some(u) = queue.pop_front() {
            for &(w, b) in &adj[u] {
                if dist[w] == usize::MAX {
                    dist[w] = dist[u] + 1;
                    parent[w] = u;
                    parent_bond[w] = b;
                    queue.push_back(w);
                }
            }
        }
        let path = |mut x: usize| {
            let mut atoms = vec![x];
            let mut bonds = Vec::new();
            while x != v {
                bonds.push(parent_bond[x]);
                x = parent[x];
                atoms.push(x);
            }
            atoms.reverse();
            (atoms, bonds)
        };
        for (b, bond) in g.bonds.iter().enumerate() {
            let (x, y) = bond.endpoints;
            if dist[x] == usize::MAX || dist[y] == usize::MAX {
                continue;
            }
            if parent_bond[x] == b || parent_bond[y] == b {
                continue;
            }
            let (px, bx) = path(x);
            let (py, by) = path(y);
            let sx: BTreeSet<usize> = px.iter().copied().collect();
            if py.iter().skip(1).any(|a| sx.contains(a)) {
                continue;
            }
            let mut edges = EdgeSet::new(m);
            for &e in bx.iter().chain(&by) {
                edges.set(e);
            }
            edges.set(b);
            if !seen_sets.insert(edges.0.clone()) {
                continue;
            }
            let mut cycle = px;
            cycle.extend(py.into_iter().skip(1).rev());
            candidates.push((normalize_cycle(cycle), edges));
        }
    }
    candidates.sort_by(|(a, _), (b, _)| {
        let mut sa = a.clone();
        sa.sort_unstable();
        let mut sb = b.clone();
        sb.sort_unstable();
        (a.len(), sa).cmp(&(b.len(), sb))
    });

    // Greedy selection of independent cycles (matroid greedy on weight).
    let mut reduced: Vec<(usize, EdgeSet)> = Vec::new();
    let mut basis = Vec::new();
    for (cycle, edges) in candidates {
        let mut r = edges.clone();
        for (pivot, row) in &reduced {
            if r.get(*pivot) {
                r.xor(row);
            }
        }
        if let Some(pivot) = r.lowest() {
            for (_, row) in reduced.iter_mut() {
                if row.get(pivot) {
                    row.xor(&r);
                }
            }
            reduced.push((pivot, r));
            basis.push(Ring { atoms: cycle });
            if basis.len() == dimension {
                break;
            }
        }
    }
    basis.sort_by_key(|r| (r.len(), r.sorted_atoms()));
    basis
}

fn components(g: &MolecularGraph) -> usize {
    let adj = g.adjacency();
    let mut seen = vec![false; g.atoms.len()];
    let mut count = 0;
    for s in 0..g.atoms.len() {
        if seen[s] {
            continue;
        }
        count += 1;
        seen[s] = true;
        let mut stack = vec![s];
        while let Some(v) = stack.pop() {
            for &(w, _) in &adj[v] {
                if !seen[w] {
                    seen[w] = true;
                    stack.push(w);
                }
            }
        }
    }
    count
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chem::parse_smiles;

    fn sets(s: &str) -> Vec<Vec<usize>> {
        perceive_rings(&parse_smiles(s).unwrap())
            .iter()
            .map(Ring::sorted_atoms)
            .collect()
    }

    #[test]
    fn acyclic() {
        assert!(sets("CCO").is_empty());
    }

    #[test]
    fn triangle() {
        assert_eq!(sets("C1CC1"), vec![vec![0, 1, 2]]);
    }

    #[test]
    fn ring_order_follows_bonds() {
        let g = parse_smiles("C1CCCCC1").unwrap();
        let rings = perceive_rings(&g);
        let ring = &rings[0].atoms;
        for i in 0..ring.len() {
            let (a, b) = (ring[i], ring[(i + 1) % ring.len()]);
            assert!(g.bond_between(a, b).is_some());
        }
        assert_eq!(ring, &vec![0, 1, 2, 3, 4, 5]);
    }

    #[test]
    fn cubane_has_five_squares() {
        let rings = sets("C12C3C4C1C5C2C3C45");
        assert_eq!(rings.len(), 5);
        assert!(rings.iter().all(|r| r.len() == 4));
    }
}
