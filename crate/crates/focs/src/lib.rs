//! Functional context-specific conditional probability tables.
//!
//! A FoCS CPT represents `Pr(X | U)` for a binary child `X` and binary
//! parents `U` as an ordered list of half-open intervals over the output of
//! a learned scorer (an MLP or its hard-threshold conversion), each paired
//! with a CPT column. The crate covers the full pipeline:
//!
//! * [`data`]: weighted binary datasets, CSV ingestion, family views and
//!   the counting primitive all estimates are built on;
//! * [`mlp`]: training the scorer and converting it to a step network;
//! * [`focs`]: column estimation, conditional log likelihood, and greedy
//!   threshold search for contexts;
//! * [`tree`]: the decision-tree CPT baseline;
//! * [`obdd`] / [`compile`]: reduced ordered BDDs, compilation of linear
//!   threshold tests and step networks, and weighted model counting for
//!   exact marginals;
//! * [`mpe`]: a big-M 0/1 encoding of MPE queries plus an exact
//!   branch-and-bound solver and LP-format export;
//! * [`codec`]: the parity-code "learn to decode" harness.

pub mod codec;
pub mod compile;
pub mod data;
pub mod focs;
pub mod mlp;
pub mod mpe;
pub mod obdd;
pub mod tree;

pub use data::{DataError, Dataset, FamilyView, Query};
pub use focs::{Context, CptColumn, FoCSCpt, Scorer};
pub use mlp::{Activation, Mlp, StepNetwork, TrainConfig};
pub use obdd::{BddId, ObddBuilder, ObddError};
pub use tree::TreeCpt;
