//! Rating prediction by belief propagation on a per-user factor graph.
//!
//! For an active user, every other user who co-rated an item becomes a
//! factor node and every item a variable node. Factor nodes vote on item
//! ratings weighted by a confidence that is re-estimated each iteration from
//! how consistent the user's own ratings are with the current beliefs.

pub mod cli;
pub mod dataset;
pub mod distribution;
pub mod eval;
pub mod graph;
pub mod inference;
pub mod oracle;
