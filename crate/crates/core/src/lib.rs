//! Point-cloud shape analysis by random walks.
//!
//! A cloud is explored by many random walks over its k-nearest-neighbour
//! graph. Each walk is embedded point by point, summarized by a stacked GRU
//! and classified; per-walk class probabilities are then aggregated into a
//! shape prediction, averaged into a retrieval descriptor, and used to flag
//! shapes whose walks disagree.

pub mod analysis;
pub mod config;
pub mod dataset;
pub mod error;
pub mod gradcheck;
pub mod inference;
pub mod neural;
pub mod point_set;
pub mod rng;
pub mod spatial_index;
pub mod trainer;
pub mod walker;

pub use error::{Error, Result};
