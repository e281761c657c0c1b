//! Label spaces, label maps and feature containers.

mod class_set;
mod features;
mod label_map;
pub mod pgm;

use std::path::Path;
use std::sync::Arc;

pub use class_set::{name_key, ClassEntry, ClassSet, Lookup};
pub use features::{decode_catf, encode_catf, FeatureTable, PatchFeatureGrid};
pub use label_map::LabelMap;

use crate::error::Result;
use crate::io;

/// Loads every `*.pgm` in `dir`, sorted by file name.
pub fn load_label_dir(dir: &Path, class_set: &Arc<ClassSet>) -> Result<Vec<LabelMap>> {
    io::list_dir(dir, "pgm")?
        .iter()
        .map(|p| LabelMap::load(p, class_set.clone()))
        .collect()
}

/// Loads every `*.catp` in `dir`, sorted by file name.
pub fn load_patch_dir(dir: &Path) -> Result<Vec<PatchFeatureGrid>> {
    io::list_dir(dir, "catp")?
        .iter()
        .map(|p| PatchFeatureGrid::load(p))
        .collect()
}
