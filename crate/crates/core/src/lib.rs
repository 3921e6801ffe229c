//! Augmentation-wise weight sharing for automatic augmentation search.
//!
//! Train a classifier once under uniform operation sampling, then score
//! candidate augmentation policies by briefly fine-tuning that shared
//! checkpoint, and optimize the policy distribution with PPO against an
//! exponential-moving-average reward baseline.
//!
//! Modules:
//! - [`augment`]: the 36 transform elements, 1296 pair operations, and the
//!   basic flip / pad-crop / cutout pipeline.
//! - [`policy`]: normalized-sigmoid multinomial over operations, sampling,
//!   gradients, marginals, masking, and the text policy format.
//! - [`optim`]: Adam, the EMA baseline, and the clipped-surrogate update.
//! - [`model`]: a small hand-differentiated classifier with SGD/Nesterov
//!   training, cosine schedule, and binary checkpoints.
//! - [`search`]: the search loop, proxy tasks, proxy-fidelity comparison,
//!   and the early-vs-late schedule experiment.
//! - [`oracle`]: brute-force KL checks and the finite-difference oracle.
//! - [`data`]: CIFAR-10 binary ingestion, deterministic splits, and the
//!   synthetic dataset.
//! - [`stats`]: correlation and the significance tests used in reports.

pub mod augment;
pub mod data;
pub mod error;
pub mod model;
pub mod optim;
pub mod oracle;
pub mod policy;
pub mod rng;
pub mod search;
pub mod stats;

pub use error::{Error, Result};
