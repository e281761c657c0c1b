//! Evaluation metrics: mIoU over label maps, Fréchet distance between
//! Gaussian fits of feature sets (FID), and the unbiased polynomial-kernel
//! MMD² estimator (KID). Feature extraction is external; these functions
//! consume [`FeatureTable`](crate::data::FeatureTable)s.

mod fid;
mod kid;
pub mod linalg;
mod segmentation;

pub use fid::{frechet_distance, gaussian_stats, gaussian_stats_with, GaussianStats};
pub use kid::{
    kid_from_tables, kid_from_tables_with, mmd2_unbiased, poly_kernel, KidConfig, KidEstimate, DEFAULT_BLOCKS,
    DEFAULT_MAX_BLOCK,
};
pub use segmentation::{confusion_counts, miou, ConfusionCounts, IouScheme};
