//! A desk-scale stand-in for finetuning a source-trained generator on a few
//! target images.
//!
//! The "generator" is a per-class color table: a pixel of class `k` is
//! rendered as `(affinity row k)·source_table + residual[k]`. That is enough
//! to exercise everything the affinity layer is supposed to do (a better
//! starting point than a random mapping, faster convergence, a residual
//! branch that is a no-op at initialization, staged finetuning) without any
//! adversarial training.

mod experiment;
mod model;
mod world;

pub use experiment::{run_experiment, RunRecord, SeedRecord, ToyReport, ToySummary};
pub use model::{
    gradients, init_target, mse, project_to_simplex, train_target, AffinityInit, Gradients, Stage, StagePlan,
    ToyModel,
};
pub use world::{fit_source, gen_world, ToyData, ToyDataset, ToyImage, ToyWorld};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Experiment configuration. Every field has a default, so `{}` is a valid
/// config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ToyConfig {
    pub source_classes: usize,
    pub target_classes: usize,
    pub width: usize,
    pub height: usize,
    /// Number of labelled source images used to fit the source table.
    pub source_images: usize,
    /// Number of target image/label pairs (the few-shot set).
    pub few_shot: usize,
    /// Voronoi sites per label map.
    pub sites_per_image: usize,
    pub noise_sigma: f64,
    /// Bound on `‖target − source‖` for mapped target classes.
    pub drift: f64,
    /// How many target classes have a true source counterpart.
    pub mapped_classes: usize,
    pub stage1_iters: usize,
    pub stage2_iters: usize,
    pub lr: f64,
    /// Loss level used for iterations-to-threshold.
    pub threshold: f64,
}

impl Default for ToyConfig {
    fn default() -> Self {
        Self {
            source_classes: 12,
            target_classes: 8,
            width: 16,
            height: 16,
            source_images: 24,
            few_shot: 5,
            sites_per_image: 6,
            noise_sigma: 0.05,
            drift: 0.1,
            mapped_classes: 6,
            stage1_iters: 300,
            stage2_iters: 300,
            lr: 0.05,
            threshold: 0.01,
        }
    }
}

impl ToyConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(format!("toy config: {m}")));
        if self.source_classes == 0 || self.target_classes == 0 {
            return bad("class counts must be positive".into());
        }
        if self.source_classes.max(self.target_classes) > u16::MAX as usize {
            return bad("too many classes".into());
        }
        if self.width == 0 || self.height == 0 {
            return bad("image size must be positive".into());
        }
        if self.sites_per_image == 0 || self.sites_per_image > self.width * self.height {
            return bad(format!("sites_per_image must be in 1..={}", self.width * self.height));
        }
        if self.source_images * self.sites_per_image < self.source_classes {
            return bad("too few source images or sites to cover every source class".into());
        }
        if self.few_shot == 0 || self.few_shot * self.sites_per_image < self.target_classes {
            return bad("too few target images or sites to cover every target class".into());
        }
        if self.mapped_classes > self.target_classes.min(self.source_classes) {
            return bad("mapped_classes exceeds the class counts".into());
        }
        if !(self.noise_sigma.is_finite() && self.noise_sigma >= 0.0) {
            return bad("noise_sigma must be finite and non-negative".into());
        }
        if !(self.drift.is_finite() && self.drift >= 0.0) {
            return bad("drift must be finite and non-negative".into());
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return bad("lr must be positive".into());
        }
        if !(self.threshold.is_finite() && self.threshold > 0.0) {
            return bad("threshold must be positive".into());
        }
        Ok(())
    }

    pub fn plan(&self) -> StagePlan {
        StagePlan {
            stage1_iters: self.stage1_iters,
            stage2_iters: self.stage2_iters,
            lr: self.lr,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_json_is_default() {
        let c: ToyConfig = serde_json::from_str("{}").unwrap();
        assert_eq!(c, ToyConfig::default());
        c.validate().unwrap();
    }

    #[test]
    fn unknown_fields_and_bad_values_rejected() {
        assert!(serde_json::from_str::<ToyConfig>(r#"{"colour": 1}"#).is_err());
        let c = ToyConfig { lr: 0.0, ..Default::default() };
        assert!(c.validate().is_err());
        let c = ToyConfig { mapped_classes: 9, ..Default::default() };
        assert!(c.validate().is_err());
        let c = ToyConfig { few_shot: 1, sites_per_image: 2, ..Default::default() };
        assert!(c.validate().is_err());
    }
}
