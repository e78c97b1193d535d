//! Substructure-aware molecule/text alignment toolkit.

pub mod augment;
pub mod chem;
pub mod encoder;
pub mod eval;
pub mod fragment;
pub mod mine;
pub mod phrase;
pub mod synth;
pub mod train;
