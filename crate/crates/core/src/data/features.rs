//! Feature tables (CATF) and patch feature grids (CATP).
//!
//! Both containers store little-endian `f32` payloads behind a small header:
//!
//! ```text
//! CATF: "CATF" u32 version=1, u32 N, u32 D, N·D f32 (row-major)
//! CATP: "CATP" u32 version=1, u32 grid_h, u32 grid_w, u32 patch_size, u32 D,
//!       grid_h·grid_w·D f32 (row-major)
//! ```
//!
//! A CATF file is accompanied by `<file>.ids.json` = `{"items": [...]}`.
//! Values are widened to `f64` in memory.

use std::collections::HashSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::class_set::{name_key, ClassSet};
use crate::data::label_map::LabelMap;
use crate::error::{Error, Result};
use crate::io;

const VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Ids {
    items: Vec<String>,
}

fn read_u32(bytes: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap())
}

fn decode_payload(bytes: &[u8], count: usize, context: &str) -> Result<Vec<f64>> {
    let need = count
        .checked_mul(4)
        .ok_or_else(|| Error::parse(context, "payload size overflows"))?;
    if bytes.len() < need {
        return Err(Error::parse(
            context,
            format!("payload truncated: need {need} bytes, found {}", bytes.len()),
        ));
    }
    if bytes.len() > need {
        return Err(Error::parse(
            context,
            format!("{} trailing bytes after payload", bytes.len() - need),
        ));
    }
    let values: Vec<f64> = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    if let Some(i) = values.iter().position(|v| !v.is_finite()) {
        return Err(Error::parse(context, format!("non-finite value at element {i}")));
    }
    Ok(values)
}

fn check_header(bytes: &[u8], magic: &[u8; 4], fields: usize, context: &str) -> Result<()> {
    let len = 8 + 4 * fields;
    if bytes.len() < len {
        return Err(Error::parse(context, "file shorter than header"));
    }
    if &bytes[..4] != magic {
        return Err(Error::parse(
            context,
            format!("bad magic, expected {}", String::from_utf8_lossy(magic)),
        ));
    }
    let version = read_u32(bytes, 4);
    if version != VERSION {
        return Err(Error::parse(context, format!("unsupported version {version}")));
    }
    Ok(())
}

/// Raw CATF body: `(n, d, values)`.
pub fn decode_catf(bytes: &[u8], context: &str) -> Result<(usize, usize, Vec<f64>)> {
    check_header(bytes, b"CATF", 2, context)?;
    let n = read_u32(bytes, 8) as usize;
    let d = read_u32(bytes, 12) as usize;
    let count = n
        .checked_mul(d)
        .ok_or_else(|| Error::parse(context, "N·D overflows"))?;
    let values = decode_payload(&bytes[16..], count, context)?;
    Ok((n, d, values))
}

pub fn encode_catf(n: usize, d: usize, values: &[f64]) -> Vec<u8> {
    assert_eq!(n * d, values.len());
    let mut out = Vec::with_capacity(16 + 4 * values.len());
    out.extend_from_slice(b"CATF");
    for v in [VERSION, n as u32, d as u32] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for &v in values {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    out
}

/// `N` items, each a `D`-dimensional real vector.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTable {
    item_ids: Vec<String>,
    dim: usize,
    data: Vec<f64>,
}

impl FeatureTable {
    pub fn new(item_ids: Vec<String>, dim: usize, data: Vec<f64>) -> Result<Self> {
        if item_ids.len() * dim != data.len() {
            return Err(Error::Invariant(format!(
                "{} items of dimension {dim} need {} values, got {}",
                item_ids.len(),
                item_ids.len() * dim,
                data.len()
            )));
        }
        let mut seen = HashSet::new();
        for id in &item_ids {
            if !seen.insert(id.as_str()) {
                return Err(Error::Invariant(format!("duplicate item id `{id}`")));
            }
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Invariant(format!(
                "non-finite entry in row {} (`{}`)",
                i / dim.max(1),
                item_ids[i / dim.max(1)]
            )));
        }
        Ok(Self {
            item_ids,
            dim,
            data,
        })
    }

    pub fn from_rows(item_ids: Vec<String>, rows: &[Vec<f64>]) -> Result<Self> {
        let dim = rows.first().map_or(0, Vec::len);
        if let Some(r) = rows.iter().find(|r| r.len() != dim) {
            return Err(Error::Dimension(format!(
                "ragged rows: {} vs {dim}",
                r.len()
            )));
        }
        Self::new(item_ids, dim, rows.concat())
    }

    pub fn decode(bytes: &[u8], ids_json: &[u8], context: &str) -> Result<Self> {
        let (n, d, data) = decode_catf(bytes, context)?;
        let ids: Ids = serde_json::from_slice(ids_json)
            .map_err(|e| Error::parse(format!("{context}.ids.json"), e.to_string()))?;
        if ids.items.len() != n {
            return Err(Error::parse(
                context,
                format!("header says N={n} but sidecar lists {} ids", ids.items.len()),
            ));
        }
        Self::new(ids.items, d, data)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = io::read_file(path)?;
        let ids = io::read_file(&io::sidecar(path, ".ids.json"))?;
        Self::decode(&bytes, &ids, &path.display().to_string())
    }

    pub fn encode(&self) -> (Vec<u8>, Vec<u8>) {
        let body = encode_catf(self.len(), self.dim, &self.data);
        let mut ids = serde_json::to_vec(&Ids {
            items: self.item_ids.clone(),
        })
        .expect("ids serialize");
        ids.push(b'\n');
        (body, ids)
    }

    /// Writes the CATF body and its `.ids.json` sidecar. Values are stored as
    /// `f32`; tables read from disk round-trip bit-exactly.
    pub fn save(&self, path: &Path) -> Result<()> {
        let (body, ids) = self.encode();
        io::write_atomic(&io::sidecar(path, ".ids.json"), &ids)?;
        io::write_atomic(path, &body)
    }

    pub fn len(&self) -> usize {
        self.item_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.item_ids.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn item_ids(&self) -> &[String] {
        &self.item_ids
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.dim.max(1)).take(self.len())
    }

    pub fn position(&self, id: &str) -> Option<usize> {
        self.item_ids.iter().position(|x| x == id)
    }

    /// Rows ordered by the classes of `class_set`, matching item ids to
    /// class names after case-folding and trimming.
    pub fn rows_for_classes(&self, class_set: &ClassSet) -> Result<Vec<&[f64]>> {
        class_set
            .names()
            .map(|name| {
                let key = name_key(name);
                self.item_ids
                    .iter()
                    .position(|id| name_key(id) == key)
                    .map(|i| self.row(i))
                    .ok_or_else(|| {
                        Error::Invariant(format!(
                            "no feature row for class `{name}` of `{}`",
                            class_set.name()
                        ))
                    })
            })
            .collect()
    }
}

/// Per-patch self-supervised features of one image.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchFeatureGrid {
    image_id: String,
    grid_h: usize,
    grid_w: usize,
    patch_size: usize,
    dim: usize,
    data: Vec<f64>,
}

impl PatchFeatureGrid {
    pub fn new(
        image_id: impl Into<String>,
        grid_h: usize,
        grid_w: usize,
        patch_size: usize,
        dim: usize,
        data: Vec<f64>,
    ) -> Result<Self> {
        if patch_size == 0 {
            return Err(Error::Invariant("patch size must be positive".into()));
        }
        if grid_h * grid_w * dim != data.len() {
            return Err(Error::Invariant(format!(
                "{grid_h}x{grid_w} patches of dimension {dim} need {} values, got {}",
                grid_h * grid_w * dim,
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Invariant("non-finite patch feature".into()));
        }
        Ok(Self {
            image_id: image_id.into(),
            grid_h,
            grid_w,
            patch_size,
            dim,
            data,
        })
    }

    pub fn decode(bytes: &[u8], image_id: &str) -> Result<Self> {
        check_header(bytes, b"CATP", 4, image_id)?;
        let gh = read_u32(bytes, 8) as usize;
        let gw = read_u32(bytes, 12) as usize;
        let ps = read_u32(bytes, 16) as usize;
        let d = read_u32(bytes, 20) as usize;
        let count = gh
            .checked_mul(gw)
            .and_then(|x| x.checked_mul(d))
            .ok_or_else(|| Error::parse(image_id, "grid size overflows"))?;
        let data = decode_payload(&bytes[24..], count, image_id)?;
        Self::new(image_id, gh, gw, ps, d, data)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = io::read_file(path)?;
        Self::decode(&bytes, &io::stem_id(path))
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(24 + 4 * self.data.len());
        out.extend_from_slice(b"CATP");
        for v in [
            VERSION,
            self.grid_h as u32,
            self.grid_w as u32,
            self.patch_size as u32,
            self.dim as u32,
        ] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for &v in &self.data {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        io::write_atomic(path, &self.encode())
    }

    pub fn image_id(&self) -> &str {
        &self.image_id
    }

    pub fn grid_h(&self) -> usize {
        self.grid_h
    }

    pub fn grid_w(&self) -> usize {
        self.grid_w
    }

    pub fn patch_size(&self) -> usize {
        self.patch_size
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn feature(&self, gy: usize, gx: usize) -> &[f64] {
        let at = (gy * self.grid_w + gx) * self.dim;
        &self.data[at..at + self.dim]
    }

    /// The grid must cover the map, overshooting by less than one patch on
    /// each axis.
    pub fn check_covers(&self, map: &LabelMap) -> Result<()> {
        let covers = |cells: usize, pixels: usize| {
            let span = cells * self.patch_size;
            span >= pixels && span - pixels < self.patch_size
        };
        if !covers(self.grid_h, map.height()) || !covers(self.grid_w, map.width()) {
            return Err(Error::Dimension(format!(
                "patch grid `{}` ({}x{} patches of {} px) does not match {}x{} label map `{}`",
                self.image_id,
                self.grid_w,
                self.grid_h,
                self.patch_size,
                map.width(),
                map.height(),
                map.id()
            )));
        }
        Ok(())
    }
}
