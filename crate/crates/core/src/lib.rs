//! Positive-unlabeled adversarial recommendation.
//!
//! A GMF-style discriminator is trained with an unbiased positive-unlabeled
//! risk estimator while two small generators produce fake user and item
//! embeddings. The crate also carries the ItemPop, PN-GMF and PU-GMF
//! baselines, a top-k ranking evaluator, and closed-form checks of the
//! adversarial objective on finite supports.

pub mod data;
pub mod error;
pub mod eval;
pub mod model;
pub mod objective;
pub mod theory;
pub mod training;

pub use error::{Error, Result};
