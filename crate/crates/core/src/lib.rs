//! Compiling small neural-network inference graphs into Plonkish constraint
//! systems and proving their execution with a Merkle spot-check argument.

pub mod argument;
pub mod circuit;
pub mod field;
pub mod graph;
pub mod zoo;
