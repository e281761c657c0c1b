use std::sync::Arc;

use super::{normalize_rows, AffinityMatrix, Method, ZeroRowPolicy};
use crate::data::{ClassSet, FeatureTable, LabelMap, PatchFeatureGrid};
use crate::error::{Error, Result};
use crate::exec::Execution;

/// Per-class prototypes, one row per class of the label space (ids are the
/// class names). Classes that never occur get a zero vector and are listed
/// in `empty`.
#[derive(Debug, Clone, PartialEq)]
pub struct Prototypes {
    pub table: FeatureTable,
    pub empty: Vec<String>,
}

pub fn prototype_from_patches(
    grids: &[PatchFeatureGrid],
    maps: &[LabelMap],
) -> Result<Prototypes> {
    prototype_from_patches_with(grids, maps, Execution::default())
}

/// Pixel-weighted mean of patch features per class: each patch contributes
/// its feature with weight equal to the number of its pixels carrying the
/// class. Pixels beyond the map (partial final patches) carry no weight.
///
/// Images are processed independently and summed in input order, so the
/// result is the same for every thread count.
pub fn prototype_from_patches_with(
    grids: &[PatchFeatureGrid],
    maps: &[LabelMap],
    exec: Execution,
) -> Result<Prototypes> {
    let Some(first) = maps.first() else {
        return Err(Error::InvalidArgument("no label maps given".into()));
    };
    if grids.len() != maps.len() {
        return Err(Error::Dimension(format!(
            "{} patch grids for {} label maps",
            grids.len(),
            maps.len()
        )));
    }
    let classes = first.class_set().clone();
    let dim = grids[0].dim();
    for (g, m) in grids.iter().zip(maps) {
        m.same_class_set(&classes)?;
        if g.image_id() != m.id() {
            return Err(Error::Invariant(format!(
                "patch grid `{}` paired with label map `{}`",
                g.image_id(),
                m.id()
            )));
        }
        if g.dim() != dim {
            return Err(Error::Dimension(format!(
                "patch grid `{}` has dimension {}, expected {dim}",
                g.image_id(),
                g.dim()
            )));
        }
        g.check_covers(m)?;
    }

    let nc = classes.len();
    let pairs: Vec<(&PatchFeatureGrid, &LabelMap)> = grids.iter().zip(maps).collect();
    let per_image = exec.map(&pairs, |(g, m)| {
        let (gw, ps) = (g.grid_w(), g.patch_size());
        let mut weights = vec![0u64; g.grid_h() * gw * nc];
        for y in 0..m.height() {
            for x in 0..m.width() {
                if let Some(c) = m.class_at(y * m.width() + x) {
                    weights[((y / ps) * gw + x / ps) * nc + c] += 1;
                }
            }
        }
        let mut sums = vec![0.0f64; nc * dim];
        let mut totals = vec![0u64; nc];
        for (patch, w) in weights.chunks_exact(nc).enumerate() {
            let f = g.feature(patch / gw, patch % gw);
            for (c, &wc) in w.iter().enumerate() {
                if wc == 0 {
                    continue;
                }
                totals[c] += wc;
                let wf = wc as f64;
                for (s, &v) in sums[c * dim..(c + 1) * dim].iter_mut().zip(f) {
                    *s += wf * v;
                }
            }
        }
        (sums, totals)
    });

    let mut sums = vec![0.0f64; nc * dim];
    let mut totals = vec![0u64; nc];
    for (s, t) in per_image {
        sums.iter_mut().zip(s).for_each(|(a, b)| *a += b);
        totals.iter_mut().zip(t).for_each(|(a, b)| *a += b);
    }

    let mut empty = Vec::new();
    for c in 0..nc {
        let row = &mut sums[c * dim..(c + 1) * dim];
        if totals[c] == 0 {
            row.fill(0.0);
            empty.push(classes.class_name(c).to_string());
        } else {
            let w = totals[c] as f64;
            row.iter_mut().for_each(|v| *v /= w);
        }
    }
    let ids = classes.names().map(str::to_string).collect();
    Ok(Prototypes {
        table: FeatureTable::new(ids, dim, sums)?,
        empty,
    })
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

/// Normalized, clamped cosine similarities between per-class vectors.
///
/// Rows of `source_vecs`/`target_vecs` are matched to classes by name.
/// Negative cosines are clamped to zero before row normalization; a zero
/// vector has zero similarity to everything.
pub fn cosine_affinity(
    source_classes: &Arc<ClassSet>,
    source_vecs: &FeatureTable,
    target_classes: &Arc<ClassSet>,
    target_vecs: &FeatureTable,
    method: Method,
    policy: ZeroRowPolicy,
) -> Result<AffinityMatrix> {
    if source_vecs.dim() != target_vecs.dim() {
        return Err(Error::Dimension(format!(
            "source vectors have dimension {}, target vectors {}",
            source_vecs.dim(),
            target_vecs.dim()
        )));
    }
    let src = source_vecs.rows_for_classes(source_classes)?;
    let tgt = target_vecs.rows_for_classes(target_classes)?;
    let mut values = Vec::with_capacity(src.len() * tgt.len());
    for t in &tgt {
        for s in &src {
            values.push(cosine(t, s).max(0.0));
        }
    }
    let raw = AffinityMatrix::new(target_classes.clone(), source_classes.clone(), values, method)?;
    normalize_rows(&raw, policy)
}

/// Affinity from cosine similarity of class prototypes.
pub fn prototype_affinity(
    source_classes: &Arc<ClassSet>,
    source_protos: &FeatureTable,
    target_classes: &Arc<ClassSet>,
    target_protos: &FeatureTable,
) -> Result<AffinityMatrix> {
    cosine_affinity(
        source_classes,
        source_protos,
        target_classes,
        target_protos,
        Method::Prototype,
        ZeroRowPolicy::default(),
    )
}

/// Affinity from cosine similarity of class-name embeddings; same
/// computation as [`prototype_affinity`].
pub fn text_affinity(
    source_classes: &Arc<ClassSet>,
    source_names: &FeatureTable,
    target_classes: &Arc<ClassSet>,
    target_names: &FeatureTable,
) -> Result<AffinityMatrix> {
    cosine_affinity(
        source_classes,
        source_names,
        target_classes,
        target_names,
        Method::Text,
        ZeroRowPolicy::default(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set(name: &str, n: usize) -> Arc<ClassSet> {
        let names: Vec<String> = (0..n).map(|i| format!("{name}{i}")).collect();
        Arc::new(ClassSet::from_names(name, &names).unwrap())
    }

    fn table(cs: &ClassSet, rows: &[Vec<f64>]) -> FeatureTable {
        FeatureTable::from_rows(cs.names().map(String::from).collect(), rows).unwrap()
    }

    #[test]
    fn single_patch_single_class() {
        let cs = set("c", 1);
        let m = LabelMap::new("im", 2, 2, vec![0; 4], cs).unwrap();
        let g = PatchFeatureGrid::new("im", 1, 1, 2, 2, vec![1.0, 2.0]).unwrap();
        let p = prototype_from_patches(&[g], &[m]).unwrap();
        assert_eq!(p.table.row(0), &[1.0, 2.0]);
        assert!(p.empty.is_empty());
    }

    #[test]
    fn weighted_by_pixel_counts() {
        // two 2x2 patches side by side; class 0 has 3 pixels left, 1 right
        let cs = set("c", 2);
        let m = LabelMap::new("im", 4, 2, vec![0, 0, 0, 1, 0, 1, 1, 1], cs).unwrap();
        let g = PatchFeatureGrid::new("im", 1, 2, 2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let p = prototype_from_patches(&[g], &[m]).unwrap();
        assert_eq!(p.table.row(0), &[0.75, 0.25]);
        assert_eq!(p.table.row(1), &[0.25, 0.75]);
    }

    #[test]
    fn partial_patches_and_empty_classes() {
        // 3x1 map under a 2x1 grid of 2-pixel patches: last column is padding
        let cs = set("c", 3);
        let m = LabelMap::new("im", 3, 1, vec![0, 0, 1], cs).unwrap();
        let g = PatchFeatureGrid::new("im", 1, 2, 2, 1, vec![2.0, 5.0]).unwrap();
        let p = prototype_from_patches(&[g], &[m]).unwrap();
        assert_eq!(p.table.row(0), &[2.0]);
        assert_eq!(p.table.row(1), &[5.0]);
        assert_eq!(p.table.row(2), &[0.0]);
        assert_eq!(p.empty, vec!["c2".to_string()]);
    }

    #[test]
    fn mismatched_grid_rejected() {
        let cs = set("c", 1);
        let m = LabelMap::new("im", 4, 4, vec![0; 16], cs).unwrap();
        let g = PatchFeatureGrid::new("im", 1, 1, 2, 1, vec![1.0]).unwrap();
        assert!(prototype_from_patches(std::slice::from_ref(&g), std::slice::from_ref(&m)).is_err());
        let other = PatchFeatureGrid::new("other", 2, 2, 2, 1, vec![1.0; 4]).unwrap();
        assert!(prototype_from_patches(&[other], &[m]).is_err());
    }

    #[test]
    fn orthogonal_prototypes_give_one_hot() {
        let s = set("s", 2);
        let t = set("t", 1);
        let a = prototype_affinity(
            &s,
            &table(&s, &[vec![1.0, 0.0], vec![0.0, 1.0]]),
            &t,
            &table(&t, &[vec![1.0, 0.0]]),
        )
        .unwrap();
        assert_eq!(a.row(0), &[1.0, 0.0]);
    }

    #[test]
    fn negative_cosines_clamped() {
        let s = set("s", 3);
        let t = set("t", 1);
        let a = prototype_affinity(
            &s,
            &table(&s, &[vec![1.0, 1.0], vec![-1.0, 0.0], vec![0.0, 1.0]]),
            &t,
            &table(&t, &[vec![0.0, 1.0]]),
        )
        .unwrap();
        assert_eq!(a.get(0, 1), 0.0);
        let c = std::f64::consts::FRAC_1_SQRT_2;
        assert!((a.get(0, 0) - c / (1.0 + c)).abs() < 1e-15);
    }

    #[test]
    fn identical_name_sets_give_identity() {
        let s = set("x", 3);
        let e = table(&s, &[vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0], vec![0.0, 0.0, 1.0]]);
        let a = text_affinity(&s, &e, &s, &e).unwrap();
        assert_eq!(a.values(), AffinityMatrix::identity(s).values());
    }

    #[test]
    fn missing_class_row_or_dim_mismatch() {
        let s = set("s", 2);
        let t = set("t", 1);
        let short = FeatureTable::from_rows(vec!["s0".into()], &[vec![1.0]]).unwrap();
        assert!(prototype_affinity(&s, &short, &t, &table(&t, &[vec![1.0]])).is_err());
        assert!(prototype_affinity(
            &s,
            &table(&s, &[vec![1.0], vec![1.0]]),
            &t,
            &table(&t, &[vec![1.0, 0.0]])
        )
        .is_err());
    }
}
