use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::world::{Rgb, ToyDataset};
use crate::affinity::{AffinityMatrix, Method};
use crate::data::ClassSet;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    TrainingFree,
    Stage1,
    Stage2,
}

/// Per-class color generator with a prepended affinity layer and a residual
/// branch.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyModel {
    pub target_classes: Arc<ClassSet>,
    pub source_classes: Arc<ClassSet>,
    pub source_table: Vec<Rgb>,
    /// Row-major `C_T × C_S`, every row on the probability simplex.
    pub affinity: Vec<f64>,
    pub residual: Vec<Rgb>,
    pub stage: Stage,
}

pub enum AffinityInit<'a> {
    Matrix(&'a AffinityMatrix),
    /// Uniform draws per entry, row-normalized.
    Random {
        target: Arc<ClassSet>,
        source: Arc<ClassSet>,
        seed: u64,
    },
}

pub fn init_target(source_table: &[Rgb], init: AffinityInit<'_>) -> Result<ToyModel> {
    let (target, source, affinity) = match init {
        AffinityInit::Matrix(a) => {
            if !a.is_normalized() || !a.flags().is_empty() {
                return Err(Error::InvalidArgument(
                    "toy model needs a normalized affinity without flagged rows".into(),
                ));
            }
            (a.target_classes().clone(), a.source_classes().clone(), a.values().to_vec())
        }
        AffinityInit::Random { target, source, seed } => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let cs = source.len();
            let mut values: Vec<f64> = (0..target.len() * cs).map(|_| rng.random::<f64>()).collect();
            for row in values.chunks_mut(cs) {
                let s: f64 = row.iter().sum();
                row.iter_mut().for_each(|v| *v /= s);
            }
            (target, source, values)
        }
    };
    if source.len() != source_table.len() {
        return Err(Error::Dimension(format!(
            "source table has {} rows for {} source classes",
            source_table.len(),
            source.len()
        )));
    }
    let n_target = target.len();
    Ok(ToyModel {
        target_classes: target,
        source_classes: source,
        source_table: source_table.to_vec(),
        affinity,
        residual: vec![[0.0; 3]; n_target],
        stage: Stage::TrainingFree,
    })
}

impl ToyModel {
    pub fn n_target(&self) -> usize {
        self.target_classes.len()
    }

    pub fn n_source(&self) -> usize {
        self.source_classes.len()
    }

    /// `(affinity row k)·source_table`, without the residual.
    pub fn transferred(&self, k: usize) -> Rgb {
        let cs = self.n_source();
        let mut out = [0.0; 3];
        for (w, s) in self.affinity[k * cs..(k + 1) * cs].iter().zip(&self.source_table) {
            for c in 0..3 {
                out[c] += w * s[c];
            }
        }
        out
    }

    pub fn predict(&self, k: usize) -> Rgb {
        let t = self.transferred(k);
        let r = self.residual[k];
        [t[0] + r[0], t[1] + r[1], t[2] + r[2]]
    }

    pub fn affinity_matrix(&self) -> Result<AffinityMatrix> {
        AffinityMatrix::new(
            self.target_classes.clone(),
            self.source_classes.clone(),
            self.affinity.clone(),
            Method::Manual,
        )
    }
}

/// Mean squared error over every pixel and channel of `data`.
pub fn mse(model: &ToyModel, data: &ToyDataset) -> f64 {
    let preds: Vec<Rgb> = (0..model.n_target()).map(|k| model.predict(k)).collect();
    let mut acc = 0.0;
    let mut n = 0usize;
    for img in &data.images {
        for (k, px) in img.labels.positions().zip(&img.pixels) {
            if let Some(k) = k {
                let p = preds[k];
                acc += (p[0] - px[0]).powi(2) + (p[1] - px[1]).powi(2) + (p[2] - px[2]).powi(2);
                n += 1;
            }
        }
    }
    acc / (3 * n) as f64
}

/// Per-class pixel counts and color sums, which determine the gradient.
#[derive(Debug, Clone)]
struct ClassStats {
    counts: Vec<f64>,
    sums: Vec<Rgb>,
    total: f64,
}

impl ClassStats {
    fn new(n_target: usize, data: &ToyDataset) -> Self {
        let mut counts = vec![0.0; n_target];
        let mut sums = vec![[0.0; 3]; n_target];
        for img in &data.images {
            for (k, px) in img.labels.positions().zip(&img.pixels) {
                if let Some(k) = k {
                    counts[k] += 1.0;
                    for c in 0..3 {
                        sums[k][c] += px[c];
                    }
                }
            }
        }
        let total = counts.iter().sum();
        Self { counts, sums, total }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub affinity: Vec<f64>,
    pub residual: Vec<Rgb>,
    pub source_table: Vec<Rgb>,
}

fn gradients_from(model: &ToyModel, stats: &ClassStats) -> Gradients {
    let (ct, cs) = (model.n_target(), model.n_source());
    let scale = 2.0 / (3.0 * stats.total);
    let mut g = Gradients {
        affinity: vec![0.0; ct * cs],
        residual: vec![[0.0; 3]; ct],
        source_table: vec![[0.0; 3]; cs],
    };
    for k in 0..ct {
        let p = model.predict(k);
        let gk: Rgb = std::array::from_fn(|c| scale * (stats.counts[k] * p[c] - stats.sums[k][c]));
        g.residual[k] = gk;
        for s in 0..cs {
            let src = model.source_table[s];
            let w = model.affinity[k * cs + s];
            g.affinity[k * cs + s] = gk[0] * src[0] + gk[1] * src[1] + gk[2] * src[2];
            for (t, gc) in g.source_table[s].iter_mut().zip(gk) {
                *t += w * gc;
            }
        }
    }
    g
}

/// Analytic gradient of [`mse`] with respect to every parameter.
pub fn gradients(model: &ToyModel, data: &ToyDataset) -> Gradients {
    gradients_from(model, &ClassStats::new(model.n_target(), data))
}

/// Euclidean projection onto the probability simplex (sort-based).
pub fn project_to_simplex(row: &mut [f64]) {
    let mut u = row.to_vec();
    u.sort_by(|a, b| b.total_cmp(a));
    let mut cumsum = 0.0;
    let mut theta = 0.0;
    for (j, &uj) in u.iter().enumerate() {
        cumsum += uj;
        let t = (cumsum - 1.0) / (j + 1) as f64;
        if uj - t > 0.0 {
            theta = t;
        }
    }
    row.iter_mut().for_each(|v| *v = (*v - theta).max(0.0));
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StagePlan {
    pub stage1_iters: usize,
    pub stage2_iters: usize,
    pub lr: f64,
}

/// Two-stage gradient descent on [`mse`]. Stage 1 updates the affinity and
/// the residual; stage 2 also updates the source table. Affinity rows are
/// projected back onto the simplex after every step in both stages. The
/// trace holds the loss before each step.
pub fn train_target(model: &ToyModel, data: &ToyDataset, plan: &StagePlan) -> Result<(ToyModel, Vec<f64>)> {
    if !(plan.lr.is_finite() && plan.lr > 0.0) {
        return Err(Error::InvalidArgument(format!("learning rate must be positive, got {}", plan.lr)));
    }
    let stats = ClassStats::new(model.n_target(), data);
    let cs = model.n_source();
    let mut m = model.clone();
    let mut trace = Vec::with_capacity(plan.stage1_iters + plan.stage2_iters);
    let stages = [(Stage::Stage1, plan.stage1_iters), (Stage::Stage2, plan.stage2_iters)];
    for (stage, iters) in stages {
        if iters == 0 {
            continue;
        }
        m.stage = stage;
        for _ in 0..iters {
            let loss = mse(&m, data);
            if !loss.is_finite() {
                return Err(Error::Diverged { iteration: trace.len(), loss });
            }
            trace.push(loss);
            let g = gradients_from(&m, &stats);
            for (a, ga) in m.affinity.iter_mut().zip(&g.affinity) {
                *a -= plan.lr * ga;
            }
            m.affinity.chunks_mut(cs).for_each(project_to_simplex);
            for (r, gr) in m.residual.iter_mut().zip(&g.residual) {
                for c in 0..3 {
                    r[c] -= plan.lr * gr[c];
                }
            }
            if stage == Stage::Stage2 {
                for (s, gs) in m.source_table.iter_mut().zip(&g.source_table) {
                    for c in 0..3 {
                        s[c] -= plan.lr * gs[c];
                    }
                }
            }
        }
    }
    Ok((m, trace))
}
