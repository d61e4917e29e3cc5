//! Relational graph attention networks: graphs, layers, models, training,
//! statistics and hyperparameter search.

pub mod autodiff;
pub mod error;
pub mod graph;
pub mod hypersearch;
pub mod layer;
pub mod models;
pub mod provenance;
pub mod stats;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
