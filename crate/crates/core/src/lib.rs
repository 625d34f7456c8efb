//! Beat-based music/dance retrieval at desk scale: beat extraction, a
//! beat-aware dual-encoder trained contrastively, query-bank hubness
//! reduction at inference, and retrieval evaluation.
//!
//! The crate consumes precomputed feature files (BDTF containers) plus beat
//! grids, or generates a synthetic paired dataset; the `beatdance` binary
//! ties the pieces into reproducible commands.

pub mod beat;
pub mod data;
pub mod error;
pub mod io;
pub mod mat;
pub mod model;
pub mod train;
pub mod nn;
pub(crate) mod seed;

pub use error::{Error, Result};
