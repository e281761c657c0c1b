use serde::{Deserialize, Serialize};

use super::model::{init_target, mse, train_target, AffinityInit, ToyModel};
use super::world::{fit_source, gen_world, Rgb, ToyDataset};
use super::ToyConfig;
use crate::affinity::{confusion_affinity_with, AffinityMatrix, Method, ZeroRowPolicy};
use crate::data::LabelMap;
use crate::error::{Error, Result};
use crate::exec::Execution;

/// Mixed into the experiment seed to draw the random baseline affinity.
const RANDOM_INIT_SALT: u64 = 0x9e37_79b9_7f4a_7c15;
const WINDOW: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub initial_mse: f64,
    pub final_mse: f64,
    /// First iteration whose loss is at or below the threshold.
    pub iterations_to_threshold: Option<usize>,
    pub monotone_windows: usize,
    pub windows: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedRecord {
    pub seed: u64,
    pub affinity_init: RunRecord,
    pub random_init: RunRecord,
    /// Training-free MSE with the ground-truth mapping (uniform rows for
    /// target classes without a counterpart).
    pub training_free_true_mse: f64,
    /// Training-free MSE of the random baseline affinity.
    pub training_free_random_mse: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToySummary {
    pub seeds: usize,
    pub initial_mse_wins: usize,
    pub iteration_wins: usize,
    pub final_mse_wins: usize,
    pub training_free_wins: usize,
    pub monotone_window_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyReport {
    pub tool: String,
    pub config: ToyConfig,
    pub runs: Vec<SeedRecord>,
    pub summary: ToySummary,
}

/// Labels every target pixel with the source class of nearest fitted color,
/// standing in for a source-trained segmenter.
fn nearest_color_segment(table: &[Rgb], target: &ToyDataset, source: &std::sync::Arc<crate::data::ClassSet>) -> Result<Vec<LabelMap>> {
    target
        .images
        .iter()
        .map(|img| {
            let data = img
                .pixels
                .iter()
                .map(|px| {
                    let best = (0..table.len())
                        .map(|s| (s, (0..3).map(|c| (table[s][c] - px[c]).powi(2)).sum::<f64>()))
                        .min_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)))
                        .expect("non-empty source table")
                        .0;
                    source.class_index(best)
                })
                .collect();
            LabelMap::new(img.labels.id(), img.labels.width(), img.labels.height(), data, source.clone())
        })
        .collect()
}

fn run_record(model: &ToyModel, data: &ToyDataset, config: &ToyConfig) -> Result<RunRecord> {
    let initial_mse = mse(model, data);
    let (trained, trace) = train_target(model, data, &config.plan())?;
    let final_mse = mse(&trained, data);
    let iterations_to_threshold = trace
        .iter()
        .position(|&l| l <= config.threshold)
        .or_else(|| (final_mse <= config.threshold).then_some(trace.len()));
    let windows = trace.len().saturating_sub(WINDOW - 1);
    let monotone_windows = (0..windows)
        .filter(|&i| trace[i..i + WINDOW].windows(2).all(|w| w[1] <= w[0]))
        .count();
    Ok(RunRecord {
        initial_mse,
        final_mse,
        iterations_to_threshold,
        monotone_windows,
        windows,
    })
}

fn true_affinity(data: &super::ToyData) -> Result<AffinityMatrix> {
    let w = &data.world;
    let cs = w.source_classes.len();
    let mut values = Vec::with_capacity(w.target_classes.len() * cs);
    for m in &w.true_mapping {
        match m {
            Some(s) => values.extend((0..cs).map(|l| if l == *s { 1.0 } else { 0.0 })),
            None => values.extend(std::iter::repeat_n(1.0 / cs as f64, cs)),
        }
    }
    let raw = AffinityMatrix::new(w.target_classes.clone(), w.source_classes.clone(), values, Method::Manual)?;
    crate::affinity::normalize_rows(&raw, ZeroRowPolicy::Error)
}

fn run_seed(config: &ToyConfig, seed: u64) -> Result<SeedRecord> {
    let data = gen_world(config, seed)?;
    let table = fit_source(&data.source)?;
    let target_maps = data.target.label_maps();
    let predicted = nearest_color_segment(&table, &data.target, &data.world.source_classes)?;
    let estimated = confusion_affinity_with(&target_maps, &predicted, ZeroRowPolicy::Uniform, Execution::Sequential)?;
    // Uniform-filled rows are flagged; the toy model only needs the values.
    let estimated = AffinityMatrix::new(
        estimated.target_classes().clone(),
        estimated.source_classes().clone(),
        estimated.values().to_vec(),
        Method::Confusion,
    )
    .and_then(|a| crate::affinity::normalize_rows(&a, ZeroRowPolicy::Error))?;

    let affinity_model = init_target(&table, AffinityInit::Matrix(&estimated))?;
    let random_model = init_target(
        &table,
        AffinityInit::Random {
            target: data.world.target_classes.clone(),
            source: data.world.source_classes.clone(),
            seed: seed ^ RANDOM_INIT_SALT,
        },
    )?;
    let true_model = init_target(&table, AffinityInit::Matrix(&true_affinity(&data)?))?;

    Ok(SeedRecord {
        seed,
        affinity_init: run_record(&affinity_model, &data.target, config)?,
        random_init: run_record(&random_model, &data.target, config)?,
        training_free_true_mse: mse(&true_model, &data.target),
        training_free_random_mse: mse(&random_model, &data.target),
    })
}

fn fewer_iterations(a: Option<usize>, b: Option<usize>) -> bool {
    match (a, b) {
        (Some(x), Some(y)) => x < y,
        (Some(_), None) => true,
        _ => false,
    }
}

/// Runs affinity-initialized and randomly initialized finetuning on the same
/// data and budget for every seed. Seeds run independently (in parallel
/// under `exec`); each run is sequential and deterministic.
pub fn run_experiment(config: &ToyConfig, seeds: &[u64], exec: Execution) -> Result<ToyReport> {
    config.validate()?;
    if seeds.len() < 2 {
        return Err(Error::InvalidArgument("the toy experiment needs at least 2 seeds".into()));
    }
    let runs = exec
        .map(seeds, |&s| run_seed(config, s))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    let count = |f: &dyn Fn(&SeedRecord) -> bool| runs.iter().filter(|r| f(r)).count();
    let (monotone, windows) = runs.iter().fold((0, 0), |(m, w), r| {
        (
            m + r.affinity_init.monotone_windows + r.random_init.monotone_windows,
            w + r.affinity_init.windows + r.random_init.windows,
        )
    });
    let summary = ToySummary {
        seeds: runs.len(),
        initial_mse_wins: count(&|r| r.affinity_init.initial_mse < r.random_init.initial_mse),
        iteration_wins: count(&|r| {
            fewer_iterations(r.affinity_init.iterations_to_threshold, r.random_init.iterations_to_threshold)
        }),
        final_mse_wins: count(&|r| r.affinity_init.final_mse < r.random_init.final_mse),
        training_free_wins: count(&|r| r.training_free_true_mse < r.training_free_random_mse),
        monotone_window_fraction: if windows == 0 { 1.0 } else { monotone as f64 / windows as f64 },
    };
    Ok(ToyReport {
        tool: crate::TOOL_VERSION.to_string(),
        config: config.clone(),
        runs,
        summary,
    })
}
