//! Unsupervised few-shot learning by self-supervised training.
//!
//! Each round embeds the unlabeled data, clusters it with DBSCAN over
//! k-reciprocal Jaccard distances, and trains the encoder on few-shot
//! episodes drawn from the resulting pseudo-classes.
//!
//! ```
//! use uflst::{data, pipeline, config::TrainConfig};
//!
//! let (train, _test) = data::generate_synthetic(&data::SyntheticSpec {
//!     num_classes: 6,
//!     points_per_class: 12,
//!     dim: 8,
//!     heldout_classes: 0,
//!     ..Default::default()
//! })
//! .unwrap();
//! let mut cfg = TrainConfig::default();
//! cfg.rounds = 2;
//! cfg.epochs_per_round = 2;
//! cfg.metric.k = 5;
//! cfg.episodes.n_c_train = 5;
//! let out = pipeline::run_training(
//!     &cfg,
//!     train.unlabeled(),
//!     &mut pipeline::Blind,
//!     &mut pipeline::NullSink,
//! )
//! .unwrap();
//! assert_eq!(out.history.len(), 2);
//! ```

pub mod checkpoint;
pub mod clustering;
pub mod config;
pub mod data;
pub mod episodes;
pub mod error;
pub mod eval;
pub mod gradcheck;
pub mod losses;
pub mod metric;
pub mod nn;
mod par;
pub mod pipeline;
pub mod run_dir;

pub use error::{Error, Result};
