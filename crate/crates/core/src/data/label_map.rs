use std::path::Path;
use std::sync::Arc;

use crate::data::class_set::{ClassSet, Lookup};
use crate::data::pgm::{self, Pgm};
use crate::error::{Error, Result};
use crate::io;

/// A segmentation map stored as raw class indices, row-major.
///
/// Every pixel is a class index of `class_set` or its ignore index; this is
/// checked on construction, so [`LabelMap::class_at`] never sees an invalid
/// value.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMap {
    id: String,
    width: usize,
    height: usize,
    data: Vec<u16>,
    class_set: Arc<ClassSet>,
}

impl LabelMap {
    pub fn new(
        id: impl Into<String>,
        width: usize,
        height: usize,
        data: Vec<u16>,
        class_set: Arc<ClassSet>,
    ) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::Invariant("label map has a zero dimension".into()));
        }
        if width * height != data.len() {
            return Err(Error::Invariant(format!(
                "label map is {width}x{height} but holds {} pixels",
                data.len()
            )));
        }
        if let Some((i, &v)) = data
            .iter()
            .enumerate()
            .find(|(_, &v)| class_set.lookup(v as u32) == Lookup::Invalid)
        {
            return Err(Error::PixelOutOfRange {
                x: i % width,
                y: i / width,
                value: v as u32,
                class_set: class_set.name().to_string(),
            });
        }
        Ok(Self {
            id: id.into(),
            width,
            height,
            data,
            class_set,
        })
    }

    /// Builds a map from class *positions* in `class_set`; `None` is the
    /// ignore index.
    pub fn from_positions(
        id: impl Into<String>,
        width: usize,
        height: usize,
        positions: &[Option<usize>],
        class_set: Arc<ClassSet>,
    ) -> Result<Self> {
        let data = positions
            .iter()
            .map(|p| match p {
                Some(pos) if *pos < class_set.len() => Ok(class_set.class_index(*pos)),
                Some(pos) => Err(Error::Invariant(format!(
                    "class position {pos} outside `{}`",
                    class_set.name()
                ))),
                None => class_set.ignore_index().ok_or_else(|| {
                    Error::Invariant(format!(
                        "`{}` has no ignore index for unlabeled pixels",
                        class_set.name()
                    ))
                }),
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(id, width, height, data, class_set)
    }

    pub fn decode(bytes: &[u8], id: &str, class_set: Arc<ClassSet>) -> Result<Self> {
        let Pgm {
            width,
            height,
            samples,
            ..
        } = pgm::decode(bytes, id)?;
        Self::new(id, width, height, samples, class_set)
    }

    /// Reads a P5 PGM; the map id is the file stem.
    pub fn load(path: &Path, class_set: Arc<ClassSet>) -> Result<Self> {
        let bytes = io::read_file(path)?;
        let id = io::stem_id(path);
        let Pgm {
            width,
            height,
            samples,
            ..
        } = pgm::decode(&bytes, &path.display().to_string())?;
        Self::new(id, width, height, samples, class_set)
    }

    /// PGM bytes; 8-bit samples when every value of the class set fits.
    pub fn encode(&self) -> Vec<u8> {
        let maxval = if self.class_set.max_raw_value() < 256 {
            255
        } else {
            65535
        };
        pgm::encode(&Pgm {
            width: self.width,
            height: self.height,
            maxval,
            samples: self.data.clone(),
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        io::write_atomic(path, &self.encode())
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[u16] {
        &self.data
    }

    pub fn class_set(&self) -> &Arc<ClassSet> {
        &self.class_set
    }

    /// Class position of pixel `i`, or `None` for the ignore index.
    #[inline]
    pub fn class_at(&self, i: usize) -> Option<usize> {
        match self.class_set.lookup(self.data[i] as u32) {
            Lookup::Class(p) => Some(p),
            _ => None,
        }
    }

    pub fn positions(&self) -> impl Iterator<Item = Option<usize>> + '_ {
        (0..self.data.len()).map(|i| self.class_at(i))
    }

    pub fn with_id(mut self, id: impl Into<String>) -> Self {
        self.id = id.into();
        self
    }

    /// Per-class pixel counts indexed by class position; ignore pixels are
    /// not counted.
    pub fn class_histogram(&self) -> Vec<u64> {
        let mut counts = vec![0u64; self.class_set.len()];
        for c in self.positions().flatten() {
            counts[c] += 1;
        }
        counts
    }

    /// Nearest-neighbour resampling: output `(x, y)` reads input
    /// `(floor(x·W/new_w), floor(y·H/new_h))`.
    pub fn resize_nearest(&self, new_w: usize, new_h: usize) -> Result<Self> {
        if new_w == 0 || new_h == 0 {
            return Err(Error::InvalidArgument(
                "resize target must be at least 1x1".into(),
            ));
        }
        let mut data = Vec::with_capacity(new_w * new_h);
        for y in 0..new_h {
            let sy = y * self.height / new_h;
            for x in 0..new_w {
                let sx = x * self.width / new_w;
                data.push(self.data[sy * self.width + sx]);
            }
        }
        Ok(Self {
            id: self.id.clone(),
            width: new_w,
            height: new_h,
            data,
            class_set: self.class_set.clone(),
        })
    }

    pub(crate) fn same_class_set(&self, other: &ClassSet) -> Result<()> {
        if *self.class_set != *other {
            return Err(Error::ClassSetMismatch {
                expected: other.name().to_string(),
                found: self.class_set.name().to_string(),
            });
        }
        Ok(())
    }
}
