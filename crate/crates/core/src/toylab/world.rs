use std::sync::Arc;

use rand::seq::index::sample;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use super::ToyConfig;
use crate::data::{ClassSet, LabelMap};
use crate::error::{Error, Result};

pub type Rgb = [f64; 3];

/// Ground truth of a synthetic source/target pair of domains.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyWorld {
    pub source_classes: Arc<ClassSet>,
    pub target_classes: Arc<ClassSet>,
    pub true_source_appearance: Vec<Rgb>,
    pub true_target_appearance: Vec<Rgb>,
    /// Source counterpart of each target class, if any.
    pub true_mapping: Vec<Option<usize>>,
    pub noise_sigma: f64,
    pub drift: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToyImage {
    pub labels: LabelMap,
    pub pixels: Vec<Rgb>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToyDataset {
    pub images: Vec<ToyImage>,
}

impl ToyDataset {
    pub fn label_maps(&self) -> Vec<LabelMap> {
        self.images.iter().map(|i| i.labels.clone()).collect()
    }

    pub fn pixel_count(&self) -> usize {
        self.images.iter().map(|i| i.pixels.len()).sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToyData {
    pub world: ToyWorld,
    pub source: ToyDataset,
    pub target: ToyDataset,
}

fn class_set(name: &str, prefix: &str, n: usize) -> Result<Arc<ClassSet>> {
    let names: Vec<String> = (0..n).map(|i| format!("{prefix}{i:02}")).collect();
    Ok(Arc::new(ClassSet::from_names(name, &names)?))
}

fn random_rgb(rng: &mut ChaCha8Rng) -> Rgb {
    [rng.random(), rng.random(), rng.random()]
}

/// A perturbation with norm uniform in `[0, bound]` and uniform direction.
fn perturb(base: Rgb, bound: f64, rng: &mut ChaCha8Rng) -> Rgb {
    let dir: [f64; 3] = [
        StandardNormal.sample(rng),
        StandardNormal.sample(rng),
        StandardNormal.sample(rng),
    ];
    let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt();
    let radius = bound * rng.random::<f64>();
    let mut out = base;
    if norm > 0.0 {
        for c in 0..3 {
            // Clipping to the unit cube only moves the point closer to `base`.
            out[c] = (base[c] + radius * dir[c] / norm).clamp(0.0, 1.0);
        }
    }
    out
}

/// Voronoi label maps whose site classes are drawn so that, across the whole
/// dataset, every class owns at least one site (and hence one pixel).
fn voronoi_maps(
    n_images: usize,
    cfg: &ToyConfig,
    classes: &Arc<ClassSet>,
    prefix: &str,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<LabelMap>> {
    let n_classes = classes.len();
    let total = n_images * cfg.sites_per_image;
    let mut site_classes: Vec<usize> = (0..n_classes).collect();
    site_classes.extend((n_classes..total).map(|_| rng.random_range(0..n_classes)));
    site_classes.shuffle(rng);

    let (w, h) = (cfg.width, cfg.height);
    let mut maps = Vec::with_capacity(n_images);
    for (i, classes_here) in site_classes.chunks(cfg.sites_per_image).enumerate() {
        // Distinct site pixels: each site owns at least its own pixel.
        let sites: Vec<(usize, usize)> = sample(rng, w * h, cfg.sites_per_image)
            .into_iter()
            .map(|p| (p % w, p / w))
            .collect();
        let data: Vec<u16> = (0..w * h)
            .map(|p| {
                let (x, y) = (p % w, p / w);
                let nearest = (0..sites.len())
                    .min_by_key(|&s| {
                        let dx = x.abs_diff(sites[s].0);
                        let dy = y.abs_diff(sites[s].1);
                        (dx * dx + dy * dy, s)
                    })
                    .expect("at least one site");
                classes.class_index(classes_here[nearest])
            })
            .collect();
        maps.push(LabelMap::new(format!("{prefix}{i:03}"), w, h, data, classes.clone())?);
    }
    Ok(maps)
}

fn render(maps: Vec<LabelMap>, appearance: &[Rgb], noise: f64, rng: &mut ChaCha8Rng) -> Result<ToyDataset> {
    let normal = Normal::new(0.0, noise).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let images = maps
        .into_iter()
        .map(|labels| {
            let pixels = labels
                .positions()
                .map(|k| {
                    let base = appearance[k.expect("toy maps have no ignore pixels")];
                    let mut px = base;
                    if noise > 0.0 {
                        for v in px.iter_mut() {
                            *v = (*v + normal.sample(rng)).clamp(0.0, 1.0);
                        }
                    }
                    px
                })
                .collect();
            ToyImage { labels, pixels }
        })
        .collect();
    Ok(ToyDataset { images })
}

/// Draws a world and its source and few-shot target datasets. Everything is
/// derived from one ChaCha8 stream seeded with `seed`.
pub fn gen_world(config: &ToyConfig, seed: u64) -> Result<ToyData> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let source_classes = class_set("toy-source", "src", config.source_classes)?;
    let target_classes = class_set("toy-target", "tgt", config.target_classes)?;

    let source_app: Vec<Rgb> = (0..config.source_classes).map(|_| random_rgb(&mut rng)).collect();
    let mapped_targets = sample(&mut rng, config.target_classes, config.mapped_classes).into_vec();
    let mapped_sources = sample(&mut rng, config.source_classes, config.mapped_classes).into_vec();
    let mut true_mapping = vec![None; config.target_classes];
    for (&t, &s) in mapped_targets.iter().zip(&mapped_sources) {
        true_mapping[t] = Some(s);
    }
    let target_app: Vec<Rgb> = true_mapping
        .iter()
        .map(|m| match m {
            Some(s) => perturb(source_app[*s], config.drift, &mut rng),
            None => random_rgb(&mut rng),
        })
        .collect();

    let source_maps = voronoi_maps(config.source_images, config, &source_classes, "source_", &mut rng)?;
    let source = render(source_maps, &source_app, config.noise_sigma, &mut rng)?;
    let target_maps = voronoi_maps(config.few_shot, config, &target_classes, "target_", &mut rng)?;
    let target = render(target_maps, &target_app, config.noise_sigma, &mut rng)?;

    Ok(ToyData {
        world: ToyWorld {
            source_classes,
            target_classes,
            true_source_appearance: source_app,
            true_target_appearance: target_app,
            true_mapping,
            noise_sigma: config.noise_sigma,
            drift: config.drift,
            seed,
        },
        source,
        target,
    })
}

/// Per-class mean color: the closed-form least-squares fit of a per-class
/// constant.
pub fn fit_source(dataset: &ToyDataset) -> Result<Vec<Rgb>> {
    let first = dataset
        .images
        .first()
        .ok_or_else(|| Error::InvalidArgument("empty source dataset".into()))?;
    let classes = first.labels.class_set().clone();
    // Running means stay exact when every pixel of a class has the same color.
    let mut means = vec![[0.0; 3]; classes.len()];
    let mut counts = vec![0u64; classes.len()];
    for img in &dataset.images {
        img.labels.same_class_set(&classes)?;
        for (k, px) in img.labels.positions().zip(&img.pixels) {
            if let Some(k) = k {
                counts[k] += 1;
                let n = counts[k] as f64;
                for c in 0..3 {
                    means[k][c] += (px[c] - means[k][c]) / n;
                }
            }
        }
    }
    if let Some(k) = counts.iter().position(|&n| n == 0) {
        return Err(Error::InvalidArgument(format!(
            "source class `{}` has no pixels",
            classes.class_name(k)
        )));
    }
    Ok(means)
}
