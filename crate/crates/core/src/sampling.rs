//! Class-balanced few-shot subset selection.
//!
//! Starting from one randomly drawn image, images are added greedily so that
//! the pooled pixel-class distribution of the subset stays as close to
//! uniform as possible, measured by a smoothed KL divergence.
//!
//! Randomness: the first pick uses ChaCha8 (`rand_chacha::ChaCha8Rng`)
//! seeded with `seed_from_u64(seed)`, drawing `random_range(0..pool_len)`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::LabelMap;
use crate::error::{Error, Result};
use crate::exec::Execution;

pub const DEFAULT_EPSILON: f64 = 1e-8;

/// Argument order of the divergence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KlDirection {
    /// `KL(uniform ‖ empirical)`.
    #[default]
    UniformToEmpirical,
    /// `KL(empirical ‖ uniform)`.
    EmpiricalToUniform,
}

/// Pixel-class distribution pooled over `maps`; ignore pixels excluded.
pub fn empirical_distribution(maps: &[LabelMap]) -> Result<Vec<f64>> {
    let Some(first) = maps.first() else {
        return Err(Error::InvalidArgument("no label maps given".into()));
    };
    let mut counts = vec![0u64; first.class_set().len()];
    for m in maps {
        m.same_class_set(first.class_set())?;
        for (t, c) in counts.iter_mut().zip(m.class_histogram()) {
            *t += c;
        }
    }
    distribution_from_counts(&counts)
}

pub fn distribution_from_counts(counts: &[u64]) -> Result<Vec<f64>> {
    let total: u64 = counts.iter().sum();
    if total == 0 {
        return Err(Error::InvalidArgument(
            "no labeled pixels: distribution undefined".into(),
        ));
    }
    Ok(counts.iter().map(|&c| c as f64 / total as f64).collect())
}

/// Smoothed divergence between the uniform distribution over `p.len()`
/// classes and `p̃ = (p + ε) / (1 + C·ε)`.
pub fn kl_to_uniform(p: &[f64], epsilon: f64, direction: KlDirection) -> f64 {
    let c = p.len() as f64;
    let u = 1.0 / c;
    let z = 1.0 + c * epsilon;
    let kl: f64 = p
        .iter()
        .map(|&pc| {
            let q = (pc + epsilon) / z;
            match direction {
                KlDirection::UniformToEmpirical => u * (u / q).ln(),
                KlDirection::EmpiricalToUniform => q * (q / u).ln(),
            }
        })
        .sum();
    // rounding can leave a tiny negative at the exact optimum
    kl.max(0.0)
}

fn kl_of_counts(counts: &[u64], epsilon: f64, direction: KlDirection) -> f64 {
    let total: u64 = counts.iter().sum();
    if total == 0 {
        let uniform = vec![1.0 / counts.len() as f64; counts.len()];
        return kl_to_uniform(&uniform, epsilon, direction);
    }
    let p: Vec<f64> = counts.iter().map(|&c| c as f64 / total as f64).collect();
    kl_to_uniform(&p, epsilon, direction)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig {
    pub k: usize,
    pub seed: u64,
    pub epsilon: f64,
    pub direction: KlDirection,
}

impl SamplerConfig {
    pub fn new(k: usize, seed: u64) -> Self {
        Self {
            k,
            seed,
            epsilon: DEFAULT_EPSILON,
            direction: KlDirection::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubsetSelection {
    pub seed: u64,
    pub epsilon: f64,
    pub selected: Vec<String>,
    /// KL of the subset after each acceptance, starting with the first image.
    pub kl_trace: Vec<f64>,
}

/// An image reduced to its class histogram.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PoolItem {
    pub id: String,
    pub counts: Vec<u64>,
}

impl PoolItem {
    pub fn from_map(map: &LabelMap) -> Self {
        Self {
            id: map.id().to_string(),
            counts: map.class_histogram(),
        }
    }
}

fn check_pool(pool: &[PoolItem], k: usize) -> Result<()> {
    if k == 0 || k > pool.len() {
        return Err(Error::InvalidArgument(format!(
            "subset size {k} outside 1..={}",
            pool.len()
        )));
    }
    let c = pool[0].counts.len();
    if pool.iter().any(|p| p.counts.len() != c) {
        return Err(Error::Dimension("pool histograms differ in class count".into()));
    }
    let mut ids: Vec<&str> = pool.iter().map(|p| p.id.as_str()).collect();
    ids.sort_unstable();
    if let Some(w) = ids.windows(2).find(|w| w[0] == w[1]) {
        return Err(Error::Invariant(format!("duplicate pool id `{}`", w[0])));
    }
    Ok(())
}

pub fn greedy_select(pool: &[LabelMap], config: &SamplerConfig) -> Result<SubsetSelection> {
    let items: Vec<PoolItem> = pool.iter().map(PoolItem::from_map).collect();
    if let Some(first) = pool.first() {
        for m in pool {
            m.same_class_set(first.class_set())?;
        }
    }
    greedy_select_items(&items, config, Execution::default())
}

/// Seeded random first pick, then greedy continuation.
pub fn greedy_select_items(
    pool: &[PoolItem],
    config: &SamplerConfig,
    exec: Execution,
) -> Result<SubsetSelection> {
    check_pool(pool, config.k)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let first = rng.random_range(0..pool.len());
    greedy_continue(pool, first, config, exec)
}

/// Greedy selection from a fixed first image.
///
/// Each step evaluates every remaining candidate (possibly in parallel) and
/// accepts the one whose addition gives the smallest divergence; equal
/// divergences go to the lexicographically smallest id. Divergences are
/// computed from exact integer histograms, so the choice does not depend on
/// the thread count.
pub fn greedy_continue(
    pool: &[PoolItem],
    first: usize,
    config: &SamplerConfig,
    exec: Execution,
) -> Result<SubsetSelection> {
    check_pool(pool, config.k)?;
    if first >= pool.len() {
        return Err(Error::InvalidArgument(format!("first index {first} out of range")));
    }
    // also rejects NaN
    if config.epsilon.is_nan() || config.epsilon <= 0.0 {
        return Err(Error::InvalidArgument("epsilon must be positive".into()));
    }
    let (eps, dir) = (config.epsilon, config.direction);
    let mut taken = vec![false; pool.len()];
    let mut total = pool[first].counts.clone();
    taken[first] = true;
    let mut selected = vec![pool[first].id.clone()];
    let mut kl_trace = vec![kl_of_counts(&total, eps, dir)];

    while selected.len() < config.k {
        let remaining: Vec<usize> = (0..pool.len()).filter(|&i| !taken[i]).collect();
        let scores = exec.map(&remaining, |&i| {
            let merged: Vec<u64> = total.iter().zip(&pool[i].counts).map(|(a, b)| a + b).collect();
            kl_of_counts(&merged, eps, dir)
        });
        let (best, kl) = remaining
            .iter()
            .zip(scores)
            .min_by(|(a, ka), (b, kb)| {
                ka.total_cmp(kb).then_with(|| pool[**a].id.cmp(&pool[**b].id))
            })
            .map(|(&i, kl)| (i, kl))
            .expect("candidates remain while k <= pool size");
        taken[best] = true;
        total.iter_mut().zip(&pool[best].counts).for_each(|(t, c)| *t += c);
        selected.push(pool[best].id.clone());
        kl_trace.push(kl);
    }
    Ok(SubsetSelection {
        seed: config.seed,
        epsilon: eps,
        selected,
        kl_trace,
    })
}
