//! Pipeline manifest: one JSON file naming every input of the affinity
//! estimators, so a run can be reproduced from a single path.
//!
//! ```json
//! {
//!   "source_classes": "classes/coco.json",
//!   "target_classes": "classes/ade.json",
//!   "target_gt": "ade/labels",
//!   "predicted_source": "ade/pred_coco",
//!   "source_patches": "coco/patches", "source_labels": "coco/labels",
//!   "target_patches": "ade/patches", "target_labels": "ade/labels",
//!   "source_embeddings": "emb/coco.catf", "target_embeddings": "emb/ade.catf",
//!   "estimators": {"confusion": true, "prototype": true, "text": true},
//!   "zero_rows": "uniform",
//!   "hard": false,
//!   "fallback": "confusion=48.7,prototype=49.5,text=51.6",
//!   "output_dir": "out"
//! }
//! ```
//!
//! Relative paths are resolved against the manifest's directory.

use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::error::{require_exists, CliError, CliResult};

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EstimatorToggles {
    pub confusion: bool,
    pub prototype: bool,
    pub text: bool,
}

impl Default for EstimatorToggles {
    fn default() -> Self {
        Self {
            confusion: true,
            prototype: true,
            text: true,
        }
    }
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineManifest {
    pub source_classes: Option<PathBuf>,
    pub target_classes: Option<PathBuf>,
    pub target_gt: Option<PathBuf>,
    pub predicted_source: Option<PathBuf>,
    pub source_patches: Option<PathBuf>,
    pub source_labels: Option<PathBuf>,
    pub target_patches: Option<PathBuf>,
    pub target_labels: Option<PathBuf>,
    pub source_embeddings: Option<PathBuf>,
    pub target_embeddings: Option<PathBuf>,
    pub test_embedder: bool,
    pub confusion_affinity: Option<PathBuf>,
    pub prototype_affinity: Option<PathBuf>,
    pub text_affinity: Option<PathBuf>,
    pub estimators: EstimatorToggles,
    pub zero_rows: Option<String>,
    pub hard: bool,
    pub fallback: Option<String>,
    pub output_dir: Option<PathBuf>,
}

const ZERO_ROW_POLICIES: [&str; 3] = ["uniform", "error", "keep-flagged"];

impl PipelineManifest {
    /// Reads, resolves and validates a manifest. Every failure is a manifest
    /// error (exit code 2).
    pub fn load(path: &Path) -> CliResult<Self> {
        let bytes = std::fs::read(path).map_err(|e| {
            CliError::usage("manifest", format!("cannot read manifest {}: {e}", path.display()))
        })?;
        let mut m: Self = serde_json::from_slice(&bytes).map_err(|e| {
            CliError::usage("manifest", format!("invalid manifest {}: {e}", path.display()))
        })?;
        let base = path.parent().unwrap_or(Path::new("")).to_path_buf();
        m.resolve(&base);
        m.validate()?;
        Ok(m)
    }

    fn paths_mut(&mut self) -> [&mut Option<PathBuf>; 14] {
        [
            &mut self.source_classes,
            &mut self.target_classes,
            &mut self.target_gt,
            &mut self.predicted_source,
            &mut self.source_patches,
            &mut self.source_labels,
            &mut self.target_patches,
            &mut self.target_labels,
            &mut self.source_embeddings,
            &mut self.target_embeddings,
            &mut self.confusion_affinity,
            &mut self.prototype_affinity,
            &mut self.text_affinity,
            &mut self.output_dir,
        ]
    }

    fn resolve(&mut self, base: &Path) {
        for p in self.paths_mut() {
            if let Some(path) = p.as_mut() {
                if path.is_relative() {
                    *path = base.join(&*path);
                }
            }
        }
    }

    fn validate(&mut self) -> CliResult<()> {
        if let Some(z) = &self.zero_rows {
            if !ZERO_ROW_POLICIES.contains(&z.as_str()) {
                return Err(CliError::usage(
                    "manifest",
                    format!("zero_rows must be one of {ZERO_ROW_POLICIES:?}, got `{z}`"),
                ));
            }
        }
        if let Some(f) = &self.fallback {
            f.parse::<cat_core::affinity::FallbackRanking>()
                .map_err(|e| CliError::usage("manifest", format!("fallback: {e}")))?;
        }
        let mut paths: Vec<PathBuf> = self.paths_mut().into_iter().flatten().map(|p| p.clone()).collect();
        // The output directory is created on demand.
        if let Some(out) = &self.output_dir {
            paths.retain(|p| p != out);
        }
        for p in paths {
            require_exists(&p).map_err(|e| CliError::usage("manifest", e.message))?;
        }
        Ok(())
    }
}

/// Explicit flag, else the manifest field, else a usage error naming both.
pub fn pick(flag: Option<PathBuf>, field: Option<&PathBuf>, flag_name: &str, field_name: &str) -> CliResult<PathBuf> {
    flag.or_else(|| field.cloned())
        .ok_or_else(|| CliError::missing_input(&format!("--{flag_name} (manifest field `{field_name}`)")))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn resolves_relative_paths_and_rejects_missing_ones() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("s.json"), "{}").unwrap();
        let m = dir.path().join("m.json");
        std::fs::write(&m, r#"{"source_classes": "s.json", "output_dir": "out"}"#).unwrap();
        let loaded = PipelineManifest::load(&m).unwrap();
        assert_eq!(loaded.source_classes.unwrap(), dir.path().join("s.json"));
        assert!(loaded.estimators.text);

        std::fs::write(&m, r#"{"target_classes": "nope.json"}"#).unwrap();
        assert_eq!(PipelineManifest::load(&m).unwrap_err().exit_code, 2);
        std::fs::write(&m, r#"{"zero_rows": "sometimes"}"#).unwrap();
        assert_eq!(PipelineManifest::load(&m).unwrap_err().exit_code, 2);
        std::fs::write(&m, r#"{"unknown": 1}"#).unwrap();
        assert_eq!(PipelineManifest::load(&m).unwrap_err().exit_code, 2);
        assert_eq!(PipelineManifest::load(&dir.path().join("absent.json")).unwrap_err().exit_code, 2);
    }
}
