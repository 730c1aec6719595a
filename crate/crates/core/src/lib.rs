//! Joint models for longitudinal and time-to-event outcomes formulated as
//! latent Gaussian models and fitted by nested Laplace approximation.

pub mod archive;
pub mod assembly;
pub mod data;
pub mod design;
pub mod error;
pub mod inference;
pub mod likelihoods;
pub mod oracle;
pub mod predict;
pub mod sparse;
pub mod spec;
pub mod summaries;
pub mod surv_augment;
pub mod verify;

pub use error::{Error, Result};
