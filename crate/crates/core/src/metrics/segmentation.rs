use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::affinity::count_pairs;
use crate::data::LabelMap;
use crate::error::{Error, Result};
use crate::exec::Execution;

/// Square `C × C` confusion counts; entry `(i, j)` counts pixels with ground
/// truth `i` predicted as `j`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionCounts {
    pub classes: usize,
    pub counts: Vec<u64>,
}

impl ConfusionCounts {
    pub fn from_rows(rows: &[Vec<u64>]) -> Result<Self> {
        let c = rows.len();
        if c == 0 || rows.iter().any(|r| r.len() != c) {
            return Err(Error::Dimension("confusion counts must be square".into()));
        }
        Ok(Self {
            classes: c,
            counts: rows.concat(),
        })
    }

    pub fn get(&self, i: usize, j: usize) -> u64 {
        self.counts[i * self.classes + j]
    }

    /// Per-class IoU, `None` for classes absent from both ground truth and
    /// prediction.
    pub fn per_class_iou(&self) -> Vec<Option<f64>> {
        self.iou_fractions()
            .into_iter()
            .map(|f| f.map(|(n, d)| n as f64 / d as f64))
            .collect()
    }

    /// `(intersection, union)` per class.
    fn iou_fractions(&self) -> Vec<Option<(u64, u64)>> {
        let c = self.classes;
        (0..c)
            .map(|k| {
                let tp = self.get(k, k);
                let fn_: u64 = (0..c).map(|j| self.get(k, j)).sum::<u64>() - tp;
                let fp: u64 = (0..c).map(|i| self.get(i, k)).sum::<u64>() - tp;
                let denom = tp + fp + fn_;
                (denom > 0).then_some((tp, denom))
            })
            .collect()
    }
}

pub fn confusion_counts(gt: &[LabelMap], pred: &[LabelMap], exec: Execution) -> Result<ConfusionCounts> {
    if let (Some(g), Some(p)) = (gt.first(), pred.first()) {
        p.same_class_set(g.class_set())?;
    }
    let counts = count_pairs(gt, pred, exec)?;
    Ok(ConfusionCounts {
        classes: gt[0].class_set().len(),
        counts,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IouScheme {
    /// Average over classes occurring in ground truth or prediction.
    #[default]
    PresentClasses,
    /// Average over all classes; absent classes count as zero.
    AllClasses,
}

impl FromStr for IouScheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "present" | "present_classes" => Ok(Self::PresentClasses),
            "all" | "all_classes" => Ok(Self::AllClasses),
            other => Err(Error::InvalidArgument(format!("unknown mIoU scheme `{other}`"))),
        }
    }
}

pub fn miou(counts: &ConfusionCounts, scheme: IouScheme) -> Result<f64> {
    if counts.counts.iter().all(|&c| c == 0) {
        return Err(Error::InvalidArgument("confusion counts are all zero".into()));
    }
    let fractions = counts.iou_fractions();
    let terms: Vec<(u64, u64)> = match scheme {
        IouScheme::PresentClasses => fractions.into_iter().flatten().collect(),
        IouScheme::AllClasses => fractions.into_iter().map(|f| f.unwrap_or((0, 1))).collect(),
    };
    if let Some((num, den)) = exact_fraction_sum(&terms) {
        let den = den.checked_mul(terms.len() as u128);
        if let Some(den) = den.filter(|&d| d < 1 << 53 && num < 1 << 53) {
            return Ok(num as f64 / den as f64);
        }
    }
    Ok(terms.iter().map(|&(n, d)| n as f64 / d as f64).sum::<f64>() / terms.len() as f64)
}

fn gcd(mut a: u128, mut b: u128) -> u128 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

/// Sum of fractions as a reduced fraction, or `None` on overflow. When the
/// result is small enough the mean is one correctly rounded division.
fn exact_fraction_sum(terms: &[(u64, u64)]) -> Option<(u128, u128)> {
    let (mut num, mut den) = (0u128, 1u128);
    for &(n, d) in terms {
        let (n, d) = (n as u128, d as u128);
        let g = gcd(den, d);
        let lcm = (den / g).checked_mul(d)?;
        num = num.checked_mul(lcm / den)?.checked_add(n.checked_mul(lcm / d)?)?;
        den = lcm;
        let r = gcd(num, den).max(1);
        (num, den) = (num / r, den / r);
    }
    Some((num, den))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::ClassSet;
    use std::sync::Arc;

    fn two() -> Arc<ClassSet> {
        Arc::new(ClassSet::from_names("c", &["a", "b"]).unwrap())
    }

    #[test]
    fn hand_counted_fixture() {
        let gt = LabelMap::new("m", 4, 1, vec![0, 0, 1, 1], two()).unwrap();
        let pred = LabelMap::new("m", 4, 1, vec![0, 1, 1, 1], two()).unwrap();
        let c = confusion_counts(&[gt], &[pred], Execution::Sequential).unwrap();
        assert_eq!(c, ConfusionCounts::from_rows(&[vec![1, 1], vec![0, 2]]).unwrap());
        assert_eq!(miou(&c, IouScheme::PresentClasses).unwrap(), 7.0 / 12.0);
    }

    #[test]
    fn identical_maps_give_diagonal_and_one() {
        let gt = LabelMap::new("m", 3, 1, vec![0, 1, 1], two()).unwrap();
        let c = confusion_counts(std::slice::from_ref(&gt), std::slice::from_ref(&gt), Execution::Sequential).unwrap();
        assert_eq!(c.counts, vec![1, 0, 0, 2]);
        assert_eq!(miou(&c, IouScheme::PresentClasses).unwrap(), 1.0);
    }

    #[test]
    fn schemes_differ_on_absent_classes() {
        let c = ConfusionCounts::from_rows(&[vec![3, 0, 0], vec![0, 1, 0], vec![0, 0, 0]]).unwrap();
        assert_eq!(miou(&c, IouScheme::PresentClasses).unwrap(), 1.0);
        assert!((miou(&c, IouScheme::AllClasses).unwrap() - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn exact_sum_matches_float_sum_for_many_classes() {
        let rows: Vec<Vec<u64>> = (0..40)
            .map(|i| (0..40).map(|j| ((i * 7 + j * 13) % 11) as u64).collect())
            .collect();
        let c = ConfusionCounts::from_rows(&rows).unwrap();
        let float: f64 = c.per_class_iou().iter().flatten().sum::<f64>() / 40.0;
        assert!((miou(&c, IouScheme::PresentClasses).unwrap() - float).abs() < 1e-14);
    }

    #[test]
    fn zero_counts_rejected() {
        let c = ConfusionCounts::from_rows(&[vec![0, 0], vec![0, 0]]).unwrap();
        assert!(miou(&c, IouScheme::PresentClasses).is_err());
    }

    #[test]
    fn class_set_mismatch_rejected() {
        let other = Arc::new(ClassSet::from_names("d", &["a", "b"]).unwrap());
        let gt = LabelMap::new("m", 1, 1, vec![0], two()).unwrap();
        let pred = LabelMap::new("m", 1, 1, vec![0], other).unwrap();
        assert!(confusion_counts(&[gt], &[pred], Execution::Sequential).is_err());
    }
}
