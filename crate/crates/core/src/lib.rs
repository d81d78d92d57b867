//! Regional latent-state QoS prediction.
//!
//! The pipeline has three stages:
//!
//! 1. [`dataset`] turns WS-Dream style matrices and region metadata into
//!    [`QosRecord`] streams and reproducible density splits.
//! 2. [`latent`] fits discrete latent-state distributions per city and per
//!    autonomous system with interleaved EM and gradient steps.
//! 3. [`model`] feeds those latent features into a sparsely gated
//!    mixture-of-experts network trained with the S-Huber loss from [`loss`].
//!
//! [`baseline`] provides UPCC and mean predictors for comparison and
//! [`nncore`] is the small reverse-mode differentiation layer the network is
//! built on.

pub mod baseline;
pub mod dataset;
pub mod error;
pub mod latent;
pub mod loss;
pub mod model;
pub mod nncore;
pub mod util;

pub use dataset::{Codebooks, DatasetDims, DensitySplit, QosRecord, RegionCodebook, RegionKind};
pub use error::{Error, ErrorKind, Result};
pub use latent::{LatentConfig, RegionalLatentModel, Responsibilities};
pub use loss::{LossKind, LossSpec, MetricReport};
pub use model::{ActivationReport, GateDecision, NetworkConfig, R2slNetwork};
pub use nncore::{Rng, Tensor};
