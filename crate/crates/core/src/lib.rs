//! Dynamic graph CNNs for point clouds.
//!
//! The crate is organised bottom-up:
//!
//! * [`tensor`]: dense arrays, a reverse-mode tape and the differentiable
//!   primitives every network here is written in.
//! * [`graph`]: pairwise distances and k-nearest-neighbour graphs in any
//!   feature dimension.
//! * [`edgeconv`]: edge functions, symmetric aggregation and the EdgeConv
//!   layer.
//! * [`models`]: the classification and part-segmentation networks, the
//!   spatial transformer and the PointNet-style baseline.
//! * [`train`]: SGD with momentum, cosine annealing, augmentation and the
//!   evaluation metrics.
//! * [`data`]: mesh ingestion and sampling, normalisation, synthetic
//!   datasets and feature-distance export.
//! * [`verify`] and [`bench`]: the property suite and timing harness used by
//!   the command line tool.

pub mod bench;
pub mod cli;
pub mod config;
pub mod data;
pub mod edgeconv;
pub mod error;
pub mod graph;
pub mod models;
pub mod parallel;
pub mod tensor;
pub mod train;
pub mod verify;

pub use error::{Error, Result};
pub use graph::{FeatureMatrix, NeighborGraph};
pub use tensor::{Real, Tensor};
