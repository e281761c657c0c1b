//! Conditioning a source model on target label maps through an affinity
//! matrix, and exporting the matrix as first-layer weights.
//!
//! Prepending `A` as a linear layer turns the one-hot target vector of a
//! pixel with class `k` into row `k` of `A`, a distribution over source
//! classes. [`apply_soft`] materializes that input; [`apply_hard`] is the
//! relabeling view of a one-hot `A`.

use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::affinity::{normalize_rows, AffinityMatrix, Method, Mode, RowFlag, ZeroRowPolicy};
use crate::data::{decode_catf, encode_catf, ClassSet, LabelMap};
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::io;

const PIXELS_PER_TASK: usize = 4096;

/// Per-pixel distribution over source classes, pixel-major.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftLabelField {
    width: usize,
    height: usize,
    source: Arc<ClassSet>,
    data: Vec<f64>,
    ignored: Vec<bool>,
}

impl SoftLabelField {
    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.source.len()
    }

    pub fn source_classes(&self) -> &Arc<ClassSet> {
        &self.source
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn pixel(&self, i: usize) -> &[f64] {
        let c = self.channels();
        &self.data[i * c..(i + 1) * c]
    }

    pub fn is_ignored(&self, i: usize) -> bool {
        self.ignored[i]
    }

    pub fn ignored_count(&self) -> usize {
        self.ignored.iter().filter(|&&b| b).count()
    }

    /// Collapses each pixel to its most likely source class (ties toward the
    /// lowest position). Ignored pixels become the source ignore index.
    pub fn argmax_labels(&self, id: &str) -> Result<LabelMap> {
        let positions: Vec<Option<usize>> = (0..self.width * self.height)
            .map(|i| {
                (!self.ignored[i]).then(|| crate::affinity::argmax(self.pixel(i)))
            })
            .collect();
        LabelMap::from_positions(id, self.width, self.height, &positions, self.source.clone())
    }

    /// CATF body (`N = width·height`, `D = C_S`), its `.ids.json` and
    /// `.meta.json` sidecars.
    pub fn save(&self, path: &Path, inputs: &BTreeMap<String, String>) -> Result<()> {
        let n = self.width * self.height;
        let ids: Vec<String> = (0..n).map(|i| i.to_string()).collect();
        let meta = FieldMeta {
            kind: "soft_label_field".into(),
            width: self.width,
            height: self.height,
            channels: self.channels(),
            source_classes: self.source.name().into(),
            source_classes_hash: self.source.content_hash(),
            ignored_pixels: (0..n).filter(|&i| self.ignored[i]).collect(),
            tool: crate::TOOL_VERSION.into(),
            inputs: inputs.clone(),
        };
        let mut ids_json = serde_json::to_vec(&serde_json::json!({ "items": ids }))
            .expect("ids serialize");
        ids_json.push(b'\n');
        io::write_atomic(&io::sidecar(path, ".ids.json"), &ids_json)?;
        io::write_atomic(&io::sidecar(path, ".meta.json"), &pretty(&meta))?;
        io::write_atomic(path, &encode_catf(n, self.channels(), &self.data))
    }
}

#[derive(Serialize, Deserialize)]
struct FieldMeta {
    kind: String,
    width: usize,
    height: usize,
    channels: usize,
    source_classes: String,
    source_classes_hash: String,
    ignored_pixels: Vec<usize>,
    tool: String,
    inputs: BTreeMap<String, String>,
}

fn pretty<T: Serialize>(v: &T) -> Vec<u8> {
    let mut out = serde_json::to_vec_pretty(v).expect("metadata serializes");
    out.push(b'\n');
    out
}

pub fn apply_soft(a: &AffinityMatrix, map: &LabelMap) -> Result<SoftLabelField> {
    apply_soft_with(a, map, Execution::default())
}

/// Replaces each target pixel by its affinity row; ignore pixels get the
/// all-zero vector and are flagged.
pub fn apply_soft_with(a: &AffinityMatrix, map: &LabelMap, exec: Execution) -> Result<SoftLabelField> {
    map.same_class_set(a.target_classes())?;
    if !a.is_normalized() {
        return Err(Error::InvalidArgument(
            "soft transfer needs a row-normalized affinity matrix".into(),
        ));
    }
    let hist = map.class_histogram();
    for (k, &n) in hist.iter().enumerate() {
        if n > 0 && a.flag(k) == Some(RowFlag::ZeroRowKept) {
            return Err(Error::ZeroRow(a.target_classes().class_name(k).to_string()));
        }
    }
    let cs = a.n_source();
    let mut data = vec![0.0; map.len() * cs];
    exec.for_each_chunk_mut(&mut data, PIXELS_PER_TASK * cs, |chunk_idx, chunk| {
        let first = chunk_idx * PIXELS_PER_TASK;
        for (j, px) in chunk.chunks_exact_mut(cs).enumerate() {
            if let Some(k) = map.class_at(first + j) {
                px.copy_from_slice(a.row(k));
            }
        }
    });
    let ignored = map.positions().map(|p| p.is_none()).collect();
    Ok(SoftLabelField {
        width: map.width(),
        height: map.height(),
        source: a.source_classes().clone(),
        data,
        ignored,
    })
}

/// Relabels each pixel with the source class of its (one-hot) affinity row.
/// Ignore pixels keep their meaning via the source set's ignore index.
pub fn apply_hard(a: &AffinityMatrix, map: &LabelMap) -> Result<LabelMap> {
    map.same_class_set(a.target_classes())?;
    if a.mode() != Mode::Hard {
        return Err(Error::InvalidArgument(
            "hard transfer needs a hard affinity matrix".into(),
        ));
    }
    let assignment = a.argmaxes();
    let positions: Vec<Option<usize>> = map.positions().map(|p| p.map(|k| assignment[k])).collect();
    if positions.iter().any(Option::is_none) && a.source_classes().ignore_index().is_none() {
        return Err(Error::Invariant(format!(
            "map `{}` has ignore pixels but source classes `{}` define no ignore index",
            map.id(),
            a.source_classes().name()
        )));
    }
    LabelMap::from_positions(
        map.id(),
        map.width(),
        map.height(),
        &positions,
        a.source_classes().clone(),
    )
}

/// Memory layout of exported weights.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum WeightLayout {
    /// `N = C_T` rows of `D = C_S`: `A` as stored.
    #[serde(rename = "row_major_TxS")]
    RowMajorTxS,
    /// `N = C_S` rows of `D = C_T`: `Aᵀ`, the usual `[in, out]` linear weight.
    #[serde(rename = "col_major_SxT")]
    ColMajorSxT,
}

impl FromStr for WeightLayout {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "row_major_TxS" | "row-major-txs" => Ok(Self::RowMajorTxS),
            "col_major_SxT" | "col-major-sxt" => Ok(Self::ColMajorSxT),
            other => Err(Error::InvalidArgument(format!("unknown layout `{other}`"))),
        }
    }
}

#[derive(Serialize, Deserialize)]
struct WeightMeta {
    kind: String,
    layout: WeightLayout,
    target_classes: String,
    source_classes: String,
    target_classes_hash: String,
    source_classes_hash: String,
    mode: Mode,
    method: Method,
    normalized: bool,
    flags: BTreeMap<String, RowFlag>,
    tool: String,
    inputs: BTreeMap<String, String>,
}

#[derive(Serialize, Deserialize)]
struct Ids {
    items: Vec<String>,
}

/// Weight payload in the given layout, with the item ids of its rows.
pub fn layer_weights(a: &AffinityMatrix, layout: WeightLayout) -> (usize, usize, Vec<String>, Vec<f64>) {
    let (ct, cs) = (a.n_target(), a.n_source());
    match layout {
        WeightLayout::RowMajorTxS => (
            ct,
            cs,
            a.target_classes().names().map(String::from).collect(),
            a.values().to_vec(),
        ),
        WeightLayout::ColMajorSxT => {
            let mut t = vec![0.0; ct * cs];
            for k in 0..ct {
                for l in 0..cs {
                    t[l * ct + k] = a.get(k, l);
                }
            }
            (cs, ct, a.source_classes().names().map(String::from).collect(), t)
        }
    }
}

/// Writes `A` as a CATF weight file plus `.ids.json` and `.meta.json`.
pub fn export_layer_weights(a: &AffinityMatrix, layout: WeightLayout, path: &Path) -> Result<()> {
    if !a.is_normalized() {
        return Err(Error::InvalidArgument(
            "only normalized affinity matrices can be exported".into(),
        ));
    }
    let (n, d, ids, values) = layer_weights(a, layout);
    let meta = WeightMeta {
        kind: "affinity_weights".into(),
        layout,
        target_classes: a.target_classes().name().into(),
        source_classes: a.source_classes().name().into(),
        target_classes_hash: a.target_classes().content_hash(),
        source_classes_hash: a.source_classes().content_hash(),
        mode: a.mode(),
        method: a.method(),
        normalized: a.is_normalized(),
        flags: a.flags().clone(),
        tool: a.provenance().tool.clone(),
        inputs: a.provenance().inputs.clone(),
    };
    let mut ids_json = serde_json::to_vec(&Ids { items: ids }).expect("ids serialize");
    ids_json.push(b'\n');
    io::write_atomic(&io::sidecar(path, ".ids.json"), &ids_json)?;
    io::write_atomic(&io::sidecar(path, ".meta.json"), &pretty(&meta))?;
    io::write_atomic(path, &encode_catf(n, d, &values))
}

/// Reads weights written by [`export_layer_weights`]. Soft matrices are
/// renormalized after the `f32` round trip.
pub fn import_layer_weights(
    path: &Path,
    target: Arc<ClassSet>,
    source: Arc<ClassSet>,
) -> Result<AffinityMatrix> {
    let ctx = path.display().to_string();
    let meta: WeightMeta = serde_json::from_slice(&io::read_file(&io::sidecar(path, ".meta.json"))?)
        .map_err(|e| Error::parse(format!("{ctx}.meta.json"), e.to_string()))?;
    if meta.target_classes_hash != target.content_hash()
        || meta.source_classes_hash != source.content_hash()
    {
        return Err(Error::ClassSetMismatch {
            expected: format!("{} -> {}", target.name(), source.name()),
            found: format!("{} -> {}", meta.target_classes, meta.source_classes),
        });
    }
    let (n, d, values) = decode_catf(&io::read_file(path)?, &ctx)?;
    let (ct, cs) = (target.len(), source.len());
    let values = match meta.layout {
        WeightLayout::RowMajorTxS if (n, d) == (ct, cs) => values,
        WeightLayout::ColMajorSxT if (n, d) == (cs, ct) => {
            let mut t = vec![0.0; ct * cs];
            for l in 0..cs {
                for k in 0..ct {
                    t[k * cs + l] = values[l * ct + k];
                }
            }
            t
        }
        _ => {
            return Err(Error::Dimension(format!(
                "{ctx}: {n}x{d} payload does not fit {ct} target / {cs} source classes"
            )))
        }
    };
    let raw = AffinityMatrix::new(target.clone(), source.clone(), values, meta.method)?;
    let mut a = match meta.mode {
        Mode::Hard => {
            let assignment = raw.argmaxes();
            AffinityMatrix::from_assignment(target, source, &assignment, meta.method)?
        }
        Mode::Soft if meta.normalized => {
            let policy = if meta.flags.values().any(|f| *f == RowFlag::ZeroRowKept) {
                ZeroRowPolicy::KeepFlagged
            } else {
                ZeroRowPolicy::Uniform
            };
            normalize_rows(&raw, policy)?
        }
        Mode::Soft => raw,
    };
    for (label, hash) in meta.inputs {
        a = a.with_input(label, hash);
    }
    a.validate()?;
    Ok(a)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set(name: &str, n: usize, ignore: Option<u16>) -> Arc<ClassSet> {
        let names: Vec<String> = (0..n).map(|i| format!("{name}{i}")).collect();
        Arc::new(
            ClassSet::from_names(name, &names)
                .unwrap()
                .with_ignore(ignore)
                .unwrap(),
        )
    }

    #[test]
    fn identity_soft_is_one_hot() {
        let cs = set("c", 2, None);
        let a = AffinityMatrix::identity(cs.clone());
        let f = apply_soft(&a, &LabelMap::new("m", 2, 1, vec![0, 1], cs).unwrap()).unwrap();
        assert_eq!(f.data(), &[1.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn hard_row_to_soft_channels() {
        let t = set("t", 1, None);
        let s = set("s", 3, None);
        let a = AffinityMatrix::from_assignment(t.clone(), s, &[2], Method::Manual).unwrap();
        let f = apply_soft(&a, &LabelMap::new("m", 1, 1, vec![0], t).unwrap()).unwrap();
        assert_eq!(f.pixel(0), &[0.0, 0.0, 1.0]);
    }

    #[test]
    fn ignore_pixels_are_zero_and_flagged() {
        let t = set("t", 2, Some(255));
        let s = set("s", 2, Some(0xffff));
        let a = AffinityMatrix::from_assignment(t.clone(), s, &[1, 0], Method::Manual).unwrap();
        let m = LabelMap::new("m", 3, 1, vec![0, 255, 1], t).unwrap();
        let f = apply_soft(&a, &m).unwrap();
        assert_eq!(f.pixel(1), &[0.0, 0.0]);
        assert!(f.is_ignored(1) && !f.is_ignored(0));
        let h = apply_hard(&a, &m).unwrap();
        assert_eq!(h.data(), &[1, 0xffff, 0]);
        assert_eq!(f.argmax_labels("m").unwrap(), h);
    }

    #[test]
    fn hard_relabel_and_errors() {
        let t = set("t", 2, Some(255));
        let s = set("s", 3, None);
        let a = AffinityMatrix::from_assignment(t.clone(), s.clone(), &[2, 1], Method::Manual).unwrap();
        let m = LabelMap::new("m", 3, 1, vec![0, 1, 0], t.clone()).unwrap();
        assert_eq!(apply_hard(&a, &m).unwrap().data(), &[2, 1, 2]);

        let with_ignore = LabelMap::new("m", 2, 1, vec![0, 255], t.clone()).unwrap();
        assert!(apply_hard(&a, &with_ignore).is_err());

        let soft = AffinityMatrix::new(t.clone(), s, vec![0.5, 0.5, 0.0, 0.0, 1.0, 0.0], Method::Manual).unwrap();
        assert!(apply_hard(&soft, &m).is_err());
        assert!(apply_soft(&soft, &m).is_err());

        let other = set("o", 2, None);
        let wrong = LabelMap::new("m", 1, 1, vec![0], other).unwrap();
        assert_eq!(apply_hard(&a, &wrong).unwrap_err().kind(), "class_set_mismatch");
    }

    #[test]
    fn identity_hard_is_noop() {
        let cs = set("c", 4, None);
        let m = LabelMap::new("m", 4, 1, vec![3, 1, 0, 2], cs.clone()).unwrap();
        assert_eq!(apply_hard(&AffinityMatrix::identity(cs), &m).unwrap(), m);
    }

    #[test]
    fn layouts_are_transposes() {
        let t = set("t", 2, None);
        let s = set("s", 3, None);
        let a = normalize_rows(
            &AffinityMatrix::new(t, s, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0], Method::Manual).unwrap(),
            ZeroRowPolicy::Uniform,
        )
        .unwrap();
        let (n, d, _, row) = layer_weights(&a, WeightLayout::RowMajorTxS);
        let (n2, d2, ids, col) = layer_weights(&a, WeightLayout::ColMajorSxT);
        assert_eq!((n, d, n2, d2), (2, 3, 3, 2));
        assert_eq!(ids, vec!["s0", "s1", "s2"]);
        for k in 0..2 {
            for l in 0..3 {
                assert_eq!(row[k * 3 + l], col[l * 2 + k]);
            }
        }
    }

    #[test]
    fn identity_export_payload() {
        let cs = set("c", 3, None);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("w.catf");
        export_layer_weights(&AffinityMatrix::identity(cs.clone()), WeightLayout::RowMajorTxS, &p).unwrap();
        let (n, d, v) = decode_catf(&std::fs::read(&p).unwrap(), "w").unwrap();
        assert_eq!((n, d), (3, 3));
        assert_eq!(v, vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]);
        let back = import_layer_weights(&p, cs.clone(), cs).unwrap();
        assert_eq!(back.mode(), Mode::Hard);
    }

    #[test]
    fn soft_export_round_trip_within_f32() {
        let t = set("t", 3, None);
        let s = set("s", 4, None);
        let vals: Vec<f64> = (0..12).map(|i| ((i * 7919) % 13) as f64 + 0.1).collect();
        let a = normalize_rows(&AffinityMatrix::new(t.clone(), s.clone(), vals, Method::Prototype).unwrap(), ZeroRowPolicy::Uniform).unwrap();
        let dir = tempfile::tempdir().unwrap();
        for layout in [WeightLayout::RowMajorTxS, WeightLayout::ColMajorSxT] {
            let p = dir.path().join("w.catf");
            export_layer_weights(&a, layout, &p).unwrap();
            let back = import_layer_weights(&p, t.clone(), s.clone()).unwrap();
            for (x, y) in a.values().iter().zip(back.values()) {
                assert!((x - y).abs() <= 2.0 * f32::EPSILON as f64, "{x} vs {y}");
            }
            assert_eq!(back.method(), Method::Prototype);
        }
    }

    #[test]
    fn soft_field_save_writes_sidecars() {
        let cs = set("c", 2, None);
        let a = AffinityMatrix::identity(cs.clone());
        let f = apply_soft(&a, &LabelMap::new("m", 2, 1, vec![1, 0], cs).unwrap()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.catf");
        f.save(&p, &BTreeMap::new()).unwrap();
        let t = crate::data::FeatureTable::load(&p).unwrap();
        assert_eq!(t.len(), 2);
        assert_eq!(t.row(0), &[0.0, 1.0]);
        assert!(io::sidecar(&p, ".meta.json").exists());
    }
}
