use std::collections::BTreeMap;

use sha2::{Digest, Sha256};

use crate::chem::{HyperedgeKind, MolecularHypergraph};

fn stable_u64(bytes: &[u8]) -> u64 {
    let digest = Sha256::digest(bytes);
    u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
}

fn edge_kind(kind: HyperedgeKind) -> u8 {
    match kind {
        HyperedgeKind::Bond(order) => order.one_hot_index() as u8 + 1,
        HyperedgeKind::Ring => 5,
    }
}

/// Weisfeiler-Lehman subtree fingerprint of the atom graph: labels of every
/// round `0..=radius` are counted, hashed into `dim` buckets, and scaled by
/// `log(1 + count)`.
pub fn leaf_fingerprint(h: &MolecularHypergraph, radius: usize, dim: usize) -> Vec<f64> {
    assert!(dim > 0, "fingerprint dimension");
    let n = h.atom_count();
    let mut neighbors: Vec<Vec<(usize, u8)>> = vec![Vec::new(); n];
    for e in &h.hyperedges {
        let kind = edge_kind(e.kind);
        for (a, b) in e.bonded_pairs() {
            neighbors[a].push((b, kind));
            neighbors[b].push((a, kind));
        }
    }
    let mut labels: Vec<u64> = h
        .atoms
        .iter()
        .map(|a| {
            let (el, aromatic, charge) = a.label();
            stable_u64(&[0, el.atomic_number(), aromatic as u8, charge as u8])
        })
        .collect();
    let mut counts: BTreeMap<u64, usize> = BTreeMap::new();
    for round in 0..=radius {
        if round > 0 {
            labels = (0..n)
                .map(|v| {
                    // An isolated atom's subtree never grows.
                    if neighbors[v].is_empty() {
                        return labels[v];
                    }
                    let mut sig: Vec<(u8, u64)> =
                        neighbors[v].iter().map(|&(w, k)| (k, labels[w])).collect();
                    sig.sort_unstable();
                    let mut bytes = vec![round as u8];
                    bytes.extend(labels[v].to_le_bytes());
                    for (k, l) in sig {
                        bytes.push(k);
                        bytes.extend(l.to_le_bytes());
                    }
                    stable_u64(&bytes)
                })
                .collect();
        }
        for &l in &labels {
            *counts.entry(l).or_default() += 1;
        }
    }
    let mut fp = vec![0.0; dim];
    for (label, count) in counts {
        fp[(label % dim as u64) as usize] += count as f64;
    }
    for x in &mut fp {
        *x = x.ln_1p();
    }
    fp
}
