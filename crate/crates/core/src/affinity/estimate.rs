use std::sync::Arc;

use super::{normalize_rows, AffinityMatrix, Method, ZeroRowPolicy};
use crate::data::{ClassSet, FeatureTable, LabelMap, PatchFeatureGrid};
use crate::error::{Error, Result};
use crate::exec::Execution;

/// Paired inputs for the image-based estimators. Target ground truth and
/// source-space predictions are matched by position and must carry the same
/// image ids and dimensions.
#[derive(Debug, Clone)]
pub struct EstimatorInputBundle {
    pub target_gt: Vec<LabelMap>,
    pub predicted_source: Vec<LabelMap>,
    pub patch_grids: Option<Vec<PatchFeatureGrid>>,
    pub name_embeddings: Option<(FeatureTable, FeatureTable)>,
}

impl EstimatorInputBundle {
    pub fn new(target_gt: Vec<LabelMap>, predicted_source: Vec<LabelMap>) -> Result<Self> {
        check_pairs(&target_gt, &predicted_source)?;
        for (g, p) in target_gt.iter().zip(&predicted_source) {
            if g.id() != p.id() {
                return Err(Error::Invariant(format!(
                    "image ids differ: ground truth `{}` paired with prediction `{}`",
                    g.id(),
                    p.id()
                )));
            }
        }
        Ok(Self {
            target_gt,
            predicted_source,
            patch_grids: None,
            name_embeddings: None,
        })
    }

    pub fn with_patch_grids(mut self, grids: Vec<PatchFeatureGrid>) -> Result<Self> {
        if grids.len() != self.target_gt.len() {
            return Err(Error::Invariant(format!(
                "{} patch grids for {} images",
                grids.len(),
                self.target_gt.len()
            )));
        }
        for (g, m) in grids.iter().zip(&self.target_gt) {
            if g.image_id() != m.id() {
                return Err(Error::Invariant(format!(
                    "patch grid `{}` paired with map `{}`",
                    g.image_id(),
                    m.id()
                )));
            }
            g.check_covers(m)?;
        }
        self.patch_grids = Some(grids);
        Ok(self)
    }

    pub fn with_name_embeddings(mut self, source: FeatureTable, target: FeatureTable) -> Self {
        self.name_embeddings = Some((source, target));
        self
    }

    pub fn confusion(&self, policy: ZeroRowPolicy) -> Result<AffinityMatrix> {
        confusion_affinity_with(
            &self.target_gt,
            &self.predicted_source,
            policy,
            Execution::default(),
        )
    }
}

fn check_pairs(rows: &[LabelMap], cols: &[LabelMap]) -> Result<(Arc<ClassSet>, Arc<ClassSet>)> {
    let (Some(r0), Some(c0)) = (rows.first(), cols.first()) else {
        return Err(Error::InvalidArgument("no label maps given".into()));
    };
    if rows.len() != cols.len() {
        return Err(Error::Dimension(format!(
            "{} ground-truth maps but {} predicted maps",
            rows.len(),
            cols.len()
        )));
    }
    for (g, p) in rows.iter().zip(cols) {
        g.same_class_set(r0.class_set())?;
        p.same_class_set(c0.class_set())?;
        if g.id() != p.id() {
            return Err(Error::Invariant(format!(
                "map `{}` paired with prediction `{}`",
                g.id(),
                p.id()
            )));
        }
        if (g.width(), g.height()) != (p.width(), p.height()) {
            return Err(Error::Dimension(format!(
                "map `{}` is {}x{} but its prediction `{}` is {}x{}",
                g.id(),
                g.width(),
                g.height(),
                p.id(),
                p.width(),
                p.height()
            )));
        }
    }
    Ok((r0.class_set().clone(), c0.class_set().clone()))
}

/// Joint pixel counts: entry `(k, l)` (row-major over `rows`' classes) is the
/// number of pixels labeled `k` in a `rows` map and `l` in the paired `cols`
/// map. Pixels that are ignore in either map are skipped. Counts are exact
/// integers, so the result does not depend on image order or thread count.
pub fn count_pairs(rows: &[LabelMap], cols: &[LabelMap], exec: Execution) -> Result<Vec<u64>> {
    let (rset, cset) = check_pairs(rows, cols)?;
    let (nr, nc) = (rset.len(), cset.len());
    let pairs: Vec<(&LabelMap, &LabelMap)> = rows.iter().zip(cols).collect();
    let per_image = exec.map(&pairs, |(g, p)| {
        let mut counts = vec![0u64; nr * nc];
        for i in 0..g.len() {
            if let (Some(k), Some(l)) = (g.class_at(i), p.class_at(i)) {
                counts[k * nc + l] += 1;
            }
        }
        counts
    });
    let mut total = vec![0u64; nr * nc];
    for counts in per_image {
        for (t, c) in total.iter_mut().zip(counts) {
            *t += c;
        }
    }
    Ok(total)
}

/// Confusion-based affinity: how often each target ground-truth class is
/// predicted as each source class by a source-trained segmenter, summed over
/// all images and normalized per target class.
pub fn confusion_affinity(target_gt: &[LabelMap], predicted_source: &[LabelMap]) -> Result<AffinityMatrix> {
    confusion_affinity_with(
        target_gt,
        predicted_source,
        ZeroRowPolicy::default(),
        Execution::default(),
    )
}

pub fn confusion_affinity_with(
    target_gt: &[LabelMap],
    predicted_source: &[LabelMap],
    policy: ZeroRowPolicy,
    exec: Execution,
) -> Result<AffinityMatrix> {
    let counts = count_pairs(target_gt, predicted_source, exec)?;
    let target = target_gt[0].class_set().clone();
    let source = predicted_source[0].class_set().clone();
    let raw = AffinityMatrix::new(
        target,
        source,
        counts.into_iter().map(|c| c as f64).collect(),
        Method::Confusion,
    )?;
    normalize_rows(&raw, policy)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set(name: &str, n: usize) -> Arc<ClassSet> {
        let names: Vec<String> = (0..n).map(|i| format!("{name}{i}")).collect();
        Arc::new(ClassSet::from_names(name, &names).unwrap())
    }

    #[test]
    fn perfect_confusion_is_identity() {
        let cs = set("c", 3);
        let m = LabelMap::new("a", 3, 1, vec![0, 1, 2], cs.clone()).unwrap();
        let a = confusion_affinity(std::slice::from_ref(&m), std::slice::from_ref(&m)).unwrap();
        assert_eq!(a.values(), AffinityMatrix::identity(cs).values());
    }

    #[test]
    fn hand_counted_example() {
        let gt = LabelMap::new("a", 4, 1, vec![0, 0, 1, 1], set("t", 2)).unwrap();
        let pred = LabelMap::new("a", 4, 1, vec![2, 2, 1, 0], set("s", 3)).unwrap();
        let a = confusion_affinity(&[gt], &[pred]).unwrap();
        assert_eq!(a.row(0), &[0.0, 0.0, 1.0]);
        assert_eq!(a.row(1), &[0.5, 0.5, 0.0]);
    }

    #[test]
    fn unseen_target_class_gets_uniform_flagged_row() {
        let gt = LabelMap::new("a", 2, 1, vec![0, 0], set("t", 2)).unwrap();
        let pred = LabelMap::new("a", 2, 1, vec![1, 1], set("s", 2)).unwrap();
        let a = confusion_affinity(&[gt], &[pred]).unwrap();
        assert_eq!(a.row(1), &[0.5, 0.5]);
        assert!(a.flag(1).is_some());
    }

    #[test]
    fn ignore_pixels_are_skipped() {
        let t = Arc::new(ClassSet::from_names("t", &["a", "b"]).unwrap().with_ignore(Some(255)).unwrap());
        let gt = LabelMap::new("a", 3, 1, vec![0, 255, 1], t).unwrap();
        let pred = LabelMap::new("a", 3, 1, vec![0, 1, 1], set("s", 2)).unwrap();
        assert_eq!(count_pairs(&[gt], &[pred], Execution::Sequential).unwrap(), vec![1, 0, 0, 1]);
    }

    #[test]
    fn errors() {
        let gt = LabelMap::new("a", 2, 1, vec![0, 0], set("t", 2)).unwrap();
        let pred = LabelMap::new("a", 1, 2, vec![1, 1], set("s", 2)).unwrap();
        assert_eq!(confusion_affinity(std::slice::from_ref(&gt), &[pred]).unwrap_err().kind(), "dimension_mismatch");
        assert!(confusion_affinity(&[], &[]).is_err());
        assert!(confusion_affinity(std::slice::from_ref(&gt), &[gt.clone(), gt.clone()]).is_err());
    }

    #[test]
    fn bundle_checks_ids() {
        let gt = LabelMap::new("a", 2, 1, vec![0, 0], set("t", 2)).unwrap();
        let pred = LabelMap::new("b", 2, 1, vec![1, 1], set("s", 2)).unwrap();
        assert!(EstimatorInputBundle::new(vec![gt.clone()], vec![pred.clone()]).is_err());
        let b = EstimatorInputBundle::new(vec![gt], vec![pred.with_id("a")]).unwrap();
        assert_eq!(b.confusion(ZeroRowPolicy::Uniform).unwrap().row(0), &[0.0, 1.0]);
    }
}
