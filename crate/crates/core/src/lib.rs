//! Hierarchical molecular grammars and grammar-induced geometry for
//! data-efficient molecular property prediction.

pub mod assets;
pub mod chem;
pub mod trees;
pub mod geometry;
pub mod meta_grammar;
pub mod mol_grammar;
pub mod optim;
pub mod diffusion;
pub mod training;
