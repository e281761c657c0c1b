use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io;

const INVALID: u32 = u32::MAX;
const IGNORE: u32 = u32::MAX - 1;

/// One entry of a label space.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassEntry {
    pub index: u16,
    pub name: String,
}

/// What a raw pixel value means under a [`ClassSet`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Lookup {
    /// Position of the class in the ordered set.
    Class(usize),
    Ignore,
    Invalid,
}

#[derive(Deserialize)]
struct Manifest {
    name: String,
    #[serde(default)]
    ignore_index: Option<i64>,
    classes: Vec<ManifestEntry>,
}

#[derive(Deserialize)]
struct ManifestEntry {
    index: i64,
    name: String,
}

#[derive(Serialize)]
struct ManifestOut<'a> {
    name: &'a str,
    ignore_index: Option<u16>,
    classes: &'a [ClassEntry],
}

/// An ordered label space.
///
/// Matrices and histograms are indexed by *position* in this list, not by
/// raw class index, so non-contiguous indices (Cityscapes ids, say) work.
#[derive(Debug, Clone)]
pub struct ClassSet {
    name: String,
    classes: Vec<ClassEntry>,
    ignore_index: Option<u16>,
    lut: Vec<u32>,
}

impl PartialEq for ClassSet {
    fn eq(&self, other: &Self) -> bool {
        self.name == other.name
            && self.classes == other.classes
            && self.ignore_index == other.ignore_index
    }
}

impl Eq for ClassSet {}

/// Key under which class names must be unique.
pub fn name_key(name: &str) -> String {
    name.trim().to_lowercase()
}

impl ClassSet {
    pub fn new(
        name: impl Into<String>,
        classes: Vec<ClassEntry>,
        ignore_index: Option<u16>,
    ) -> Result<Self> {
        let name = name.into();
        if classes.is_empty() {
            return Err(Error::Invariant(format!("class set `{name}` is empty")));
        }
        let mut seen_idx = HashMap::new();
        let mut seen_name = HashMap::new();
        for (pos, c) in classes.iter().enumerate() {
            if seen_idx.insert(c.index, pos).is_some() {
                return Err(Error::Invariant(format!(
                    "duplicate class index {} (`{}`)",
                    c.index, c.name
                )));
            }
            if name_key(&c.name).is_empty() {
                return Err(Error::Invariant(format!(
                    "class index {} has an empty name",
                    c.index
                )));
            }
            if seen_name.insert(name_key(&c.name), pos).is_some() {
                return Err(Error::Invariant(format!(
                    "duplicate class name `{}` (index {})",
                    c.name, c.index
                )));
            }
        }
        if let Some(ig) = ignore_index {
            if seen_idx.contains_key(&ig) {
                return Err(Error::Invariant(format!(
                    "ignore_index {ig} collides with a class index"
                )));
            }
        }

        let max = classes
            .iter()
            .map(|c| c.index)
            .chain(ignore_index)
            .max()
            .unwrap_or(0) as usize;
        let mut lut = vec![INVALID; max + 1];
        for (pos, c) in classes.iter().enumerate() {
            lut[c.index as usize] = pos as u32;
        }
        if let Some(ig) = ignore_index {
            lut[ig as usize] = IGNORE;
        }
        Ok(Self {
            name,
            classes,
            ignore_index,
            lut,
        })
    }

    /// Contiguous indices `0..names.len()`, no ignore index.
    pub fn from_names<S: AsRef<str>>(name: impl Into<String>, names: &[S]) -> Result<Self> {
        let classes = names
            .iter()
            .enumerate()
            .map(|(i, n)| {
                let index = u16::try_from(i)
                    .map_err(|_| Error::Invariant("more than 65536 classes".into()))?;
                Ok(ClassEntry {
                    index,
                    name: n.as_ref().to_string(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(name, classes, None)
    }

    pub fn with_ignore(self, ignore_index: Option<u16>) -> Result<Self> {
        Self::new(self.name, self.classes, ignore_index)
    }

    pub fn parse(bytes: &[u8], context: &str) -> Result<Self> {
        let m: Manifest =
            serde_json::from_slice(bytes).map_err(|e| Error::parse(context, e.to_string()))?;
        let to_u16 = |v: i64, what: &str| {
            u16::try_from(v).map_err(|_| {
                Error::parse(
                    context,
                    format!("{what} {v} is outside the label-map range 0..=65535"),
                )
            })
        };
        let classes = m
            .classes
            .into_iter()
            .map(|e| {
                Ok(ClassEntry {
                    index: to_u16(e.index, &format!("class `{}` index", e.name))?,
                    name: e.name,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let ignore = m.ignore_index.map(|v| to_u16(v, "ignore_index")).transpose()?;
        Self::new(m.name, classes, ignore)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&io::read_file(path)?, &path.display().to_string())
    }

    /// Canonical manifest JSON; [`ClassSet::content_hash`] is taken over these bytes.
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&ManifestOut {
            name: &self.name,
            ignore_index: self.ignore_index,
            classes: &self.classes,
        })
        .expect("class set serializes")
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut s = self.to_json();
        s.push('\n');
        io::write_atomic(path, s.as_bytes())
    }

    pub fn content_hash(&self) -> String {
        io::sha256_hex(self.to_json().as_bytes())
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn len(&self) -> usize {
        self.classes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.classes.is_empty()
    }

    pub fn classes(&self) -> &[ClassEntry] {
        &self.classes
    }

    pub fn ignore_index(&self) -> Option<u16> {
        self.ignore_index
    }

    pub fn class_name(&self, pos: usize) -> &str {
        &self.classes[pos].name
    }

    pub fn class_index(&self, pos: usize) -> u16 {
        self.classes[pos].index
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.classes.iter().map(|c| c.name.as_str())
    }

    /// Position of a class by name, after case-folding and trimming.
    pub fn position_by_name(&self, name: &str) -> Option<usize> {
        let key = name_key(name);
        self.classes.iter().position(|c| name_key(&c.name) == key)
    }

    #[inline]
    pub fn lookup(&self, value: u32) -> Lookup {
        match self.lut.get(value as usize) {
            None | Some(&INVALID) => Lookup::Invalid,
            Some(&IGNORE) => Lookup::Ignore,
            Some(&pos) => Lookup::Class(pos as usize),
        }
    }

    /// Largest raw value (class or ignore) this set can produce.
    pub fn max_raw_value(&self) -> u16 {
        (self.lut.len() - 1) as u16
    }
}
