//! Bundled molecule sets.

/// Twenty molecules, one `SMILES name` pair per line: chains, branched,
/// charged, monocyclic, fused, spiro and bridged ring systems.
pub const CORPUS: &str = include_str!("../assets/corpus.smi");

/// Labeled dataset (`mol_id,smiles,target`). The target is the structural
/// statistic `0.5 * atoms + 1.5 * rings + heteroatoms - 0.3 * branch atoms`,
/// where branch atoms have three or more heavy neighbors.
pub const SYNTHETIC_CSV: &str = include_str!("../assets/synthetic.csv");

/// `(name, smiles)` pairs of [`CORPUS`].
pub fn corpus() -> Vec<(&'static str, &'static str)> {
    CORPUS
        .lines()
        .filter_map(|l| l.split_once(' '))
        .map(|(smiles, name)| (name, smiles))
        .collect()
}
