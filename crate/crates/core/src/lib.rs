//! Analysis of negotiation diagrams: soundness checking on the reachability
//! graph, summarization by state elimination, and summarization by the
//! reduction rules merge, iteration, useless arc and shortcut.

pub mod cli;
pub mod model;
pub mod rules;
pub mod semantics;
pub mod state_elim;
pub mod strategies;
pub mod structure;
pub mod transformers;

pub use model::{Negotiation, Outcome};
pub use transformers::TransformerExpr;
