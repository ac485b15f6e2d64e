//! Knowledge-aware social recommendation: a metapath-guided heterogeneous
//! graph encoder with attentive fusion, three self-supervised
//! mutual-information objectives, joint BPR training, and a leave-one-out
//! ranking harness.

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod graph;
pub mod infomax;
pub mod metapath;
pub mod model;
pub mod numerics;
pub mod rng;
pub mod synthetic;
pub mod trainer;

pub use error::{Result, SminError};
