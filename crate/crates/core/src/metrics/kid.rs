use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::FeatureTable;
use crate::error::{Error, Result};
use crate::exec::Execution;

pub const DEFAULT_MAX_BLOCK: usize = 1000;
pub const DEFAULT_BLOCKS: usize = 10;

/// Cubic polynomial kernel `(aᵀb / D + 1)³`.
#[inline]
pub fn poly_kernel(a: &[f64], b: &[f64]) -> f64 {
    let d = a.len() as f64;
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    (dot / d + 1.0).powi(3)
}

/// Unbiased MMD² between two samples under [`poly_kernel`]: within-set
/// kernel sums exclude the diagonal.
pub fn mmd2_unbiased(x: &[&[f64]], y: &[&[f64]]) -> f64 {
    let (m, n) = (x.len() as f64, y.len() as f64);
    let within = |s: &[&[f64]]| {
        let mut acc = 0.0;
        for i in 0..s.len() {
            for j in i + 1..s.len() {
                acc += poly_kernel(s[i], s[j]);
            }
        }
        2.0 * acc
    };
    let mut cross = 0.0;
    for a in x {
        for b in y {
            cross += poly_kernel(a, b);
        }
    }
    within(x) / (m * (m - 1.0)) + within(y) / (n * (n - 1.0)) - 2.0 * cross / (m * n)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KidConfig {
    /// Rows drawn from each table per block; `None` means `min(Nx, Ny, 1000)`.
    pub block_size: Option<usize>,
    pub n_blocks: usize,
    pub seed: u64,
}

impl Default for KidConfig {
    fn default() -> Self {
        Self {
            block_size: None,
            n_blocks: DEFAULT_BLOCKS,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KidEstimate {
    pub mean: f64,
    /// Sample standard deviation over blocks (0 for a single block).
    pub std: f64,
    pub block_size: usize,
    pub n_blocks: usize,
    pub seed: u64,
    pub blocks: Vec<f64>,
}

impl KidEstimate {
    pub fn standard_error(&self) -> f64 {
        self.std / (self.n_blocks as f64).sqrt()
    }
}

pub fn kid_from_tables(x: &FeatureTable, y: &FeatureTable, config: &KidConfig) -> Result<KidEstimate> {
    kid_from_tables_with(x, y, config, Execution::default())
}

/// Mean over random blocks of the unbiased MMD². Each block draws
/// `block_size` rows without replacement from each table using ChaCha8
/// seeded with `config.seed`; all draws happen up front, so the estimate is
/// independent of how blocks are scheduled.
pub fn kid_from_tables_with(
    x: &FeatureTable,
    y: &FeatureTable,
    config: &KidConfig,
    exec: Execution,
) -> Result<KidEstimate> {
    if x.is_empty() || y.is_empty() {
        return Err(Error::InvalidArgument("KID needs nonempty feature tables".into()));
    }
    if x.dim() != y.dim() {
        return Err(Error::Dimension(format!(
            "feature dimensions {} and {} differ",
            x.dim(),
            y.dim()
        )));
    }
    let limit = x.len().min(y.len());
    let block = config.block_size.unwrap_or(limit.min(DEFAULT_MAX_BLOCK));
    if block > limit {
        return Err(Error::InvalidArgument(format!(
            "block size {block} exceeds the smaller table ({limit} rows)"
        )));
    }
    if block < 2 {
        return Err(Error::InvalidArgument("block size must be at least 2".into()));
    }
    if config.n_blocks == 0 {
        return Err(Error::InvalidArgument("need at least one block".into()));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let draws: Vec<(Vec<usize>, Vec<usize>)> = (0..config.n_blocks)
        .map(|_| {
            (
                rand::seq::index::sample(&mut rng, x.len(), block).into_vec(),
                rand::seq::index::sample(&mut rng, y.len(), block).into_vec(),
            )
        })
        .collect();
    let blocks = exec.map(&draws, |(ix, iy)| {
        let xs: Vec<&[f64]> = ix.iter().map(|&i| x.row(i)).collect();
        let ys: Vec<&[f64]> = iy.iter().map(|&i| y.row(i)).collect();
        mmd2_unbiased(&xs, &ys)
    });

    let k = blocks.len() as f64;
    let mean = blocks.iter().sum::<f64>() / k;
    let std = if blocks.len() > 1 {
        (blocks.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (k - 1.0)).sqrt()
    } else {
        0.0
    };
    Ok(KidEstimate {
        mean,
        std,
        block_size: block,
        n_blocks: config.n_blocks,
        seed: config.seed,
        blocks,
    })
}
