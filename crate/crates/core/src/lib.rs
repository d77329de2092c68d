//! Stateful online learning for a hashed-embedding recommender.
//!
//! - [`model`]: factorized logistic scorer and single-example SGD
//! - [`hashing`]: seeded single/double hashing of ids and collision analytics
//! - [`datagen`]: synthetic event streams with latent drift and catalog churn
//! - [`event`]: the event type and its JSON-lines log format
//! - [`policies`]: none / stateless window / stateful incremental / online retraining
//! - [`replay`]: prequential backtests, AUC, lift tables
//! - [`checkpoint`]: bit-exact binary checkpoints and resume

pub mod checkpoint;
pub mod datagen;
pub mod error;
pub mod event;
pub mod hashing;
pub mod model;
pub mod policies;
pub mod replay;

pub use error::{CheckpointError, Error, Result};
pub use event::Event;
pub use hashing::{CollisionReport, HashConfig, HashMode, HashedIndex};
pub use model::{ModelConfig, ModelState, Prediction};
pub use policies::{CostMeter, PolicyKind, RetrainPolicy};
pub use replay::{ReplayReport, ReplaySpec};
