//! Desk-scale laboratory for temporal betweenness centrality (TBC): exact
//! computation under several optimal-path semantics, and a learnable
//! regression pipeline built on path-count-gated temporal message passing
//! with a clustering-guided contrastive objective.

pub mod autodiff;
pub mod clustering;
pub mod contrastive;
pub mod encoders;
pub mod error;
pub mod graph;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod oracle;
pub mod synth;
pub mod training;

pub use error::{Error, Result};
