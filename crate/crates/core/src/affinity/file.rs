//! JSON form of an affinity matrix.
//!
//! Entries are written with 17 significant digits so that a load/save cycle
//! reproduces the file byte for byte.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::value::RawValue;

use super::{AffinityMatrix, Method, Mode, Provenance, RowFlag};
use crate::data::ClassSet;
use crate::error::{Error, Result};
use crate::io;

#[derive(Serialize)]
struct FileOut<'a> {
    target_classes: &'a str,
    source_classes: &'a str,
    target_classes_hash: String,
    source_classes_hash: String,
    mode: Mode,
    method: Method,
    normalized: bool,
    flags: &'a BTreeMap<String, RowFlag>,
    tool: &'a str,
    inputs: &'a BTreeMap<String, String>,
    rows: Box<RawValue>,
}

#[derive(Deserialize)]
struct FileIn {
    target_classes: String,
    source_classes: String,
    #[serde(default)]
    target_classes_hash: Option<String>,
    #[serde(default)]
    source_classes_hash: Option<String>,
    mode: Mode,
    method: Method,
    normalized: bool,
    #[serde(default)]
    flags: BTreeMap<String, RowFlag>,
    #[serde(default)]
    tool: String,
    #[serde(default)]
    inputs: BTreeMap<String, String>,
    rows: Vec<Vec<f64>>,
}

pub(crate) fn format_f64(v: f64) -> String {
    format!("{v:.16e}")
}

fn rows_json(a: &AffinityMatrix) -> String {
    let mut s = String::from("[");
    for (k, row) in a.rows().enumerate() {
        s.push_str(if k == 0 { "\n    [" } else { ",\n    [" });
        let cells: Vec<String> = row.iter().map(|&v| format_f64(v)).collect();
        s.push_str(&cells.join(", "));
        s.push(']');
    }
    s.push_str("\n  ]");
    s
}

impl AffinityMatrix {
    pub fn to_json(&self) -> String {
        let out = FileOut {
            target_classes: self.target.name(),
            source_classes: self.source.name(),
            target_classes_hash: self.target.content_hash(),
            source_classes_hash: self.source.content_hash(),
            mode: self.mode,
            method: self.method,
            normalized: self.normalized,
            flags: &self.flags,
            tool: &self.provenance.tool,
            inputs: &self.provenance.inputs,
            rows: RawValue::from_string(rows_json(self)).expect("rows are valid JSON"),
        };
        let mut s = serde_json::to_string_pretty(&out).expect("affinity serializes");
        s.push('\n');
        s
    }

    /// Parses an affinity file against the class sets it was built for. Class
    /// names, content hashes (when present) and dimensions must all agree.
    pub fn from_json(
        bytes: &[u8],
        target: Arc<ClassSet>,
        source: Arc<ClassSet>,
        context: &str,
    ) -> Result<Self> {
        let f: FileIn =
            serde_json::from_slice(bytes).map_err(|e| Error::parse(context, e.to_string()))?;
        for (label, name, hash, cs) in [
            ("target", &f.target_classes, &f.target_classes_hash, &target),
            ("source", &f.source_classes, &f.source_classes_hash, &source),
        ] {
            let hash_ok = hash.as_ref().is_none_or(|h| *h == cs.content_hash());
            if name != cs.name() || !hash_ok {
                return Err(Error::ClassSetMismatch {
                    expected: format!("{label} `{}`", cs.name()),
                    found: format!("`{name}` in {context}"),
                });
            }
        }
        if f.rows.len() != target.len() || f.rows.iter().any(|r| r.len() != source.len()) {
            return Err(Error::Dimension(format!(
                "{context}: expected {}x{} rows",
                target.len(),
                source.len()
            )));
        }
        for name in f.flags.keys() {
            if target.position_by_name(name).is_none() {
                return Err(Error::parse(
                    context,
                    format!("flag for unknown target class `{name}`"),
                ));
            }
        }
        let values = f.rows.concat();
        let mut a = AffinityMatrix::new(target, source, values, f.method)?;
        a.mode = f.mode;
        a.normalized = f.normalized;
        a.flags = f.flags;
        a.provenance = Provenance {
            tool: f.tool,
            inputs: f.inputs,
        };
        a.validate()?;
        Ok(a)
    }

    pub fn load(path: &Path, target: Arc<ClassSet>, source: Arc<ClassSet>) -> Result<Self> {
        let bytes = io::read_file(path)?;
        Self::from_json(&bytes, target, source, &path.display().to_string())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        io::write_atomic(path, self.to_json().as_bytes())
    }
}
