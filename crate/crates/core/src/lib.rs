//! Heterogeneous temporal hypergraph neural network.
//!
//! The pipeline goes: typed snapshot edge lists ([`graph`]) are turned into
//! per-snapshot k-hop / k-ring hyperedges and star-expanded ([`hyperedge`]),
//! encoded with hierarchical relation, semantic and temporal attention
//! ([`encoder`]) on top of a small reverse-mode matrix engine ([`numeric`]),
//! trained with a future-neighbour contrastive objective ([`objective`]) and
//! scored with link-prediction protocols ([`eval`]).
//!
//! Data-parallel inner loops run on rayon when the `parallel` feature is on
//! (the default) and fall back to plain iterators otherwise. Results are
//! bit-identical either way.

pub mod encoder;
pub mod error;
pub mod eval;
pub mod graph;
pub mod hyperedge;
pub mod numeric;
pub mod objective;
pub mod par;

pub use error::{Error, Result};
