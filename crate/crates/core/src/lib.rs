//! Class affinity transfer: estimate how the classes of a target label space
//! relate to those of a source label space, and use that mapping to condition
//! a source-trained semantic image synthesis model on target segmentation maps.
//!
//! * [`data`]: label spaces, PGM label maps, CATF/CATP feature files
//! * [`affinity`]: confusion, prototype and text estimators, normalization,
//!   binarization and majority-vote combination
//! * [`transfer`]: applying an affinity matrix to label maps, weight export
//! * [`sampling`]: class-balanced few-shot subset selection
//! * [`metrics`]: mIoU, Fréchet distance and kernel MMD (KID)
//! * [`toylab`]: a small synthetic generator for checking the transfer mechanism

pub mod affinity;
pub mod data;
pub mod error;
pub mod exec;
pub mod io;
pub mod metrics;
pub mod sampling;
pub mod toylab;
pub mod transfer;

pub use error::{Error, Result};
pub use exec::Execution;

/// Version string embedded in every file the toolkit writes.
pub const TOOL_VERSION: &str = concat!("cat-core ", env!("CARGO_PKG_VERSION"));
