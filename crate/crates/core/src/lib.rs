//! Caption-derived token features for multi-task ranking.
//!
//! The crate runs the whole loop on a laptop: a synthetic world with planted
//! caption-only signal ([`datagen`]), captioning behind a gated interface
//! ([`content`]), caption normalization and token-ID mapping ([`tokenize`]),
//! decayed per-user interest profiles ([`profile`]), example assembly
//! ([`features`]), a concatenation-fusion multi-task ranker ([`ranker`]),
//! offline metrics and significance tests ([`eval`]) and the experiment
//! driver that ties arms together ([`pipeline`]).

pub mod content;
pub mod datagen;
pub mod eval;
pub mod features;
pub mod hash;
pub mod pipeline;
pub mod profile;
pub mod ranker;
pub mod task;
pub mod tokenize;

pub use task::{Task, NUM_TASKS};
