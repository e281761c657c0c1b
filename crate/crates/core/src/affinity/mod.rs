//! Class affinity matrices.
//!
//! An [`AffinityMatrix`] has one row per *target* class and one column per
//! *source* class. Row `k` holds the weights with which source classes are
//! mixed to represent target class `k`; a normalized row sums to one so that
//! prepending the matrix to a source model keeps its input on the scale of a
//! one-hot source map.

mod combine;
mod embed;
mod estimate;
mod file;
mod prototype;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::data::ClassSet;
use crate::error::{Error, Result};

pub use combine::{combine_majority, Combination, FallbackRanking, Vote, VoteRule};
pub use embed::TrigramEmbedder;
pub use estimate::{
    confusion_affinity, confusion_affinity_with, count_pairs, EstimatorInputBundle,
};
pub use prototype::{
    cosine_affinity, prototype_affinity, prototype_from_patches, prototype_from_patches_with,
    text_affinity, Prototypes,
};

/// Row sums of a normalized matrix must be within this of one.
pub const ROW_SUM_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Soft,
    Hard,
}

/// Which estimator produced a matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Confusion,
    Prototype,
    Text,
    Combined,
    Manual,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::Confusion => "confusion",
            Method::Prototype => "prototype",
            Method::Text => "text",
            Method::Combined => "combined",
            Method::Manual => "manual",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "confusion" => Ok(Method::Confusion),
            "prototype" => Ok(Method::Prototype),
            "text" => Ok(Method::Text),
            "combined" => Ok(Method::Combined),
            "manual" => Ok(Method::Manual),
            other => Err(Error::InvalidArgument(format!("unknown method `{other}`"))),
        }
    }
}

/// What to do with a target row that has no evidence at all.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ZeroRowPolicy {
    /// Fill with `1/C_S` and flag the row.
    #[default]
    Uniform,
    Error,
    /// Leave the row at zero and flag it.
    KeepFlagged,
}

impl FromStr for ZeroRowPolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "uniform" => Ok(Self::Uniform),
            "error" => Ok(Self::Error),
            "keep-flagged" | "keep_flagged" => Ok(Self::KeepFlagged),
            other => Err(Error::InvalidArgument(format!(
                "unknown zero-row policy `{other}`"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RowFlag {
    /// Row had no evidence and was filled uniformly.
    #[serde(rename = "zero_row")]
    ZeroRow,
    /// Row had no evidence and was left at zero.
    #[serde(rename = "zero_row_kept")]
    ZeroRowKept,
}

/// Where a matrix came from: tool version plus content hashes of its inputs.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub tool: String,
    pub inputs: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AffinityMatrix {
    target: Arc<ClassSet>,
    source: Arc<ClassSet>,
    values: Vec<f64>,
    mode: Mode,
    method: Method,
    normalized: bool,
    flags: BTreeMap<String, RowFlag>,
    provenance: Provenance,
}

impl AffinityMatrix {
    /// An unnormalized soft matrix; `values` is row-major `C_T × C_S`.
    pub fn new(
        target: Arc<ClassSet>,
        source: Arc<ClassSet>,
        values: Vec<f64>,
        method: Method,
    ) -> Result<Self> {
        if values.len() != target.len() * source.len() {
            return Err(Error::Dimension(format!(
                "affinity between {} target and {} source classes needs {} values, got {}",
                target.len(),
                source.len(),
                target.len() * source.len(),
                values.len()
            )));
        }
        Ok(Self {
            target,
            source,
            values,
            mode: Mode::Soft,
            method,
            normalized: false,
            flags: BTreeMap::new(),
            provenance: Provenance {
                tool: crate::TOOL_VERSION.to_string(),
                inputs: BTreeMap::new(),
            },
        })
    }

    pub fn identity(classes: Arc<ClassSet>) -> Self {
        let n = classes.len();
        let assignment: Vec<usize> = (0..n).collect();
        Self::from_assignment(classes.clone(), classes, &assignment, Method::Manual)
            .expect("identity assignment is valid")
    }

    /// A hard matrix sending target position `k` to source position `assignment[k]`.
    pub fn from_assignment(
        target: Arc<ClassSet>,
        source: Arc<ClassSet>,
        assignment: &[usize],
        method: Method,
    ) -> Result<Self> {
        if assignment.len() != target.len() {
            return Err(Error::Dimension(format!(
                "assignment has {} entries for {} target classes",
                assignment.len(),
                target.len()
            )));
        }
        let cs = source.len();
        let mut values = vec![0.0; target.len() * cs];
        for (k, &l) in assignment.iter().enumerate() {
            if l >= cs {
                return Err(Error::Dimension(format!(
                    "source position {l} out of range for {cs} classes"
                )));
            }
            values[k * cs + l] = 1.0;
        }
        let mut m = Self::new(target, source, values, method)?;
        m.mode = Mode::Hard;
        m.normalized = true;
        Ok(m)
    }

    pub fn target_classes(&self) -> &Arc<ClassSet> {
        &self.target
    }

    pub fn source_classes(&self) -> &Arc<ClassSet> {
        &self.source
    }

    pub fn n_target(&self) -> usize {
        self.target.len()
    }

    pub fn n_source(&self) -> usize {
        self.source.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn row(&self, k: usize) -> &[f64] {
        let cs = self.n_source();
        &self.values[k * cs..(k + 1) * cs]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.values.chunks_exact(self.n_source())
    }

    pub fn get(&self, k: usize, l: usize) -> f64 {
        self.values[k * self.n_source() + l]
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn method(&self) -> Method {
        self.method
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    pub fn flags(&self) -> &BTreeMap<String, RowFlag> {
        &self.flags
    }

    pub fn provenance(&self) -> &Provenance {
        &self.provenance
    }

    pub fn with_method(mut self, method: Method) -> Self {
        self.method = method;
        self
    }

    pub fn with_input(mut self, label: impl Into<String>, hash: impl Into<String>) -> Self {
        self.provenance.inputs.insert(label.into(), hash.into());
        self
    }

    pub fn flag(&self, k: usize) -> Option<RowFlag> {
        self.flags.get(self.target.class_name(k)).copied()
    }

    /// Source position with the largest affinity in row `k`. Ties go to the
    /// lowest position; NaN entries never win.
    pub fn row_argmax(&self, k: usize) -> usize {
        argmax(self.row(k))
    }

    pub fn argmaxes(&self) -> Vec<usize> {
        (0..self.n_target()).map(|k| self.row_argmax(k)).collect()
    }

    /// Checks the mode/normalization invariants. Rows flagged
    /// [`RowFlag::ZeroRowKept`] are exempt from the sum-to-one check.
    pub fn validate(&self) -> Result<()> {
        if let Some(i) = self.values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Invariant(format!(
                "non-finite affinity for target `{}`",
                self.target.class_name(i / self.n_source())
            )));
        }
        for k in 0..self.n_target() {
            let row = self.row(k);
            let name = self.target.class_name(k);
            if self.mode == Mode::Hard {
                let ones = row.iter().filter(|&&v| v == 1.0).count();
                let zeros = row.iter().filter(|&&v| v == 0.0).count();
                if ones != 1 || ones + zeros != row.len() {
                    return Err(Error::Invariant(format!(
                        "hard affinity row `{name}` is not one-hot"
                    )));
                }
            }
            if self.normalized {
                if row.iter().any(|&v| v < 0.0) {
                    return Err(Error::Invariant(format!(
                        "normalized affinity row `{name}` has a negative entry"
                    )));
                }
                let kept = self.flag(k) == Some(RowFlag::ZeroRowKept);
                let sum: f64 = row.iter().sum();
                if !(kept && sum == 0.0) && (sum - 1.0).abs() > ROW_SUM_TOLERANCE {
                    return Err(Error::Invariant(format!(
                        "normalized affinity row `{name}` sums to {sum}"
                    )));
                }
            }
        }
        Ok(())
    }

    pub(crate) fn check_classes(&self, target: &ClassSet, source: &ClassSet) -> Result<()> {
        if *self.target != *target {
            return Err(Error::ClassSetMismatch {
                expected: target.name().to_string(),
                found: self.target.name().to_string(),
            });
        }
        if *self.source != *source {
            return Err(Error::ClassSetMismatch {
                expected: source.name().to_string(),
                found: self.source.name().to_string(),
            });
        }
        Ok(())
    }
}

pub(crate) fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    let mut best_v = f64::NEG_INFINITY;
    for (i, &v) in row.iter().enumerate() {
        if v > best_v {
            best = i;
            best_v = v;
        }
    }
    best
}

/// Divides each nonzero row by its sum; zero rows follow `policy`.
pub fn normalize_rows(a: &AffinityMatrix, policy: ZeroRowPolicy) -> Result<AffinityMatrix> {
    if let Some(i) = a.values.iter().position(|v| !v.is_finite() || *v < 0.0) {
        return Err(Error::Invariant(format!(
            "cannot normalize: entry {} in row `{}` is negative or non-finite",
            a.values[i],
            a.target.class_name(i / a.n_source())
        )));
    }
    let cs = a.n_source();
    let mut out = a.clone();
    for k in 0..a.n_target() {
        let name = a.target.class_name(k).to_string();
        let row = &mut out.values[k * cs..(k + 1) * cs];
        let sum: f64 = row.iter().sum();
        if sum > 0.0 {
            row.iter_mut().for_each(|v| *v /= sum);
            if out.flags.get(&name) == Some(&RowFlag::ZeroRowKept) {
                out.flags.remove(&name);
            }
            continue;
        }
        match policy {
            ZeroRowPolicy::Uniform => {
                row.fill(1.0 / cs as f64);
                out.flags.insert(name, RowFlag::ZeroRow);
            }
            ZeroRowPolicy::Error => return Err(Error::ZeroRow(name)),
            ZeroRowPolicy::KeepFlagged => {
                out.flags.insert(name, RowFlag::ZeroRowKept);
            }
        }
    }
    out.normalized = true;
    Ok(out)
}

/// One-hot each row at its argmax (ties toward the lowest source position).
pub fn binarize_hard(a: &AffinityMatrix) -> AffinityMatrix {
    let assignment = a.argmaxes();
    let mut out = AffinityMatrix::from_assignment(
        a.target.clone(),
        a.source.clone(),
        &assignment,
        a.method,
    )
    .expect("argmax assignment is in range");
    out.flags = a.flags.clone();
    out.provenance = a.provenance.clone();
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sets(ct: usize, cs: usize) -> (Arc<ClassSet>, Arc<ClassSet>) {
        let t: Vec<String> = (0..ct).map(|i| format!("t{i}")).collect();
        let s: Vec<String> = (0..cs).map(|i| format!("s{i}")).collect();
        (
            Arc::new(ClassSet::from_names("tgt", &t).unwrap()),
            Arc::new(ClassSet::from_names("src", &s).unwrap()),
        )
    }

    fn matrix(ct: usize, cs: usize, values: Vec<f64>) -> AffinityMatrix {
        let (t, s) = sets(ct, cs);
        AffinityMatrix::new(t, s, values, Method::Manual).unwrap()
    }

    #[test]
    fn normalize_simple_row() {
        let a = normalize_rows(&matrix(1, 3, vec![2.0, 2.0, 0.0]), ZeroRowPolicy::Uniform).unwrap();
        assert_eq!(a.row(0), &[0.5, 0.5, 0.0]);
        assert!(a.flags().is_empty());
        a.validate().unwrap();
    }

    #[test]
    fn zero_row_policies() {
        let m = matrix(2, 4, vec![0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 1.0]);
        let u = normalize_rows(&m, ZeroRowPolicy::Uniform).unwrap();
        assert_eq!(u.row(0), &[0.25; 4]);
        assert_eq!(u.flag(0), Some(RowFlag::ZeroRow));
        u.validate().unwrap();

        let err = normalize_rows(&m, ZeroRowPolicy::Error).unwrap_err();
        assert!(err.to_string().contains("`t0`"), "{err}");

        let kept = normalize_rows(&m, ZeroRowPolicy::KeepFlagged).unwrap();
        assert_eq!(kept.row(0), &[0.0; 4]);
        assert_eq!(kept.flag(0), Some(RowFlag::ZeroRowKept));
        kept.validate().unwrap();
    }

    #[test]
    fn normalize_rejects_negative() {
        assert!(normalize_rows(&matrix(1, 2, vec![1.0, -1.0]), ZeroRowPolicy::Uniform).is_err());
    }

    #[test]
    fn binarize_examples() {
        let a = binarize_hard(&matrix(2, 3, vec![0.2, 0.5, 0.3, 0.5, 0.5, 0.0]));
        assert_eq!(a.row(0), &[0.0, 1.0, 0.0]);
        assert_eq!(a.row(1), &[1.0, 0.0, 0.0]);
        assert_eq!(a.mode(), Mode::Hard);
        a.validate().unwrap();
    }

    #[test]
    fn binarize_never_picks_nan() {
        let a = binarize_hard(&matrix(1, 3, vec![f64::NAN, 0.1, 0.2]));
        assert_eq!(a.row_argmax(0), 2);
    }

    #[test]
    fn validate_catches_broken_invariants() {
        let mut a = matrix(1, 2, vec![0.7, 0.7]);
        a.normalized = true;
        assert!(a.validate().is_err());
        a.mode = Mode::Hard;
        a.values = vec![1.0, 1.0];
        assert!(a.validate().is_err());
    }

    proptest! {
        #[test]
        fn normalized_rows_sum_to_one(vals in proptest::collection::vec(0.0f64..10.0, 12)) {
            let a = normalize_rows(&matrix(3, 4, vals), ZeroRowPolicy::Uniform).unwrap();
            for row in a.rows() {
                prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < ROW_SUM_TOLERANCE);
                prop_assert!(row.iter().all(|&v| v >= 0.0));
            }
            let again = normalize_rows(&a, ZeroRowPolicy::Uniform).unwrap();
            for (x, y) in a.values().iter().zip(again.values()) {
                prop_assert!((x - y).abs() <= 1e-15);
            }
        }

        #[test]
        fn binarize_commutes_with_normalize(vals in proptest::collection::vec(0.0f64..10.0, 12)) {
            let a = matrix(3, 4, vals);
            let n = normalize_rows(&a, ZeroRowPolicy::Uniform).unwrap();
            let (bn, ba) = (binarize_hard(&n), binarize_hard(&a));
            prop_assert_eq!(bn.values(), ba.values());
        }
    }
}
