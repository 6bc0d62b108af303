//! Temporally consistent Koopman autoencoders (tcKAE) for long-horizon
//! forecasting of autonomous dynamical systems.
//!
//! The model encodes a state into a latent space, advances it with a
//! learned linear operator, and decodes predictions back. Besides the
//! usual reconstruction and look-ahead losses (and the backward-operator
//! consistency pair), training can regularize *temporal consistency*:
//! multi-step predictions of the same target time from different start
//! snapshots are compared to each other in latent space, which needs no
//! labels beyond the batch and keeps long rollouts stable even with very
//! little training data.
//!
//! The crate contains a small fixed-purpose float64 matrix kernel with
//! reverse-mode differentiation, the autoencoder, the loss terms, the
//! synthetic pendulum data pipeline, the Adam training loop, and the
//! multi-initial-condition evaluation protocol.

pub mod data;
pub mod error;
pub mod evaluation;
pub mod losses;
pub mod matrix;
pub mod model;
pub mod reference;
pub mod tape;
pub mod training;

pub use data::{SplitDataset, TimeSeriesDataset};
pub use error::{Error, Result};
pub use evaluation::EvalReport;
pub use losses::{Batch, LossBreakdown, LossWeights};
pub use matrix::Matrix;
pub use model::{Architecture, KoopmanAutoencoder, Spectrum};
pub use training::{TrainConfig, TrainLog};
