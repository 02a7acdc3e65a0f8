use super::{Element, MolecularHypergraph};

pub const HYPEREDGE_FEATURE_DIM: usize = 16;

fn element_bucket(e: Element) -> usize {
    match e {
        Element::C => 0,
        Element::N => 1,
        Element::O => 2,
        Element::S => 3,
        Element::P => 4,
        Element::F | Element::Cl => 5,
        Element::Br | Element::I => 6,
        Element::B | Element::H => 7,
    }
}

/// Hand-crafted descriptor of one hyperedge.
///
/// Layout: `[is_ring, arity/8, order one-hot (single, double, triple,
/// aromatic), aromatic, element buckets x8 (count/arity), charged fraction]`.
/// Ring hyperedges leave the order one-hot at zero.
pub fn hyperedge_features(h: &MolecularHypergraph, edge: usize) -> [f64; HYPEREDGE_FEATURE_DIM] {
    let e = &h.hyperedges[edge];
    let arity = e.members.len() as f64;
    let mut f = [0.0; HYPEREDGE_FEATURE_DIM];
    f[0] = if e.is_ring() { 1.0 } else { 0.0 };
    f[1] = arity / 8.0;
    if let Some(order) = e.bond_order() {
        f[2 + order.one_hot_index()] = 1.0;
    }
    let aromatic = e.members.iter().all(|&a| h.atoms[a].aromatic);
    f[6] = if aromatic { 1.0 } else { 0.0 };
    for &a in &e.members {
        f[7 + element_bucket(h.atoms[a].element)] += 1.0 / arity;
    }
    let charged = e
        .members
        .iter()
        .filter(|&&a| h.atoms[a].formal_charge != 0)
        .count();
    f[15] = charged as f64 / arity;
    f
}
