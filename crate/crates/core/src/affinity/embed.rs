use crate::data::{name_key, ClassSet, FeatureTable};
use crate::error::Result;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

/// Deterministic class-name embedder for self-contained runs and tests.
///
/// This is NOT CLIP. Each name is case-folded, trimmed and wrapped as
/// `^name$`; every character trigram is hashed with seeded FNV-1a, the low
/// bits pick one of `dim` buckets and the top bit picks the sign. The bucket
/// vector is L2-normalized. Names sharing trigrams end up similar.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TrigramEmbedder {
    pub dim: usize,
    pub seed: u64,
}

impl Default for TrigramEmbedder {
    fn default() -> Self {
        Self {
            dim: 64,
            seed: 0x00ca_7e11,
        }
    }
}

impl TrigramEmbedder {
    fn hash(&self, bytes: &[u8]) -> u64 {
        let mut h = FNV_OFFSET ^ self.seed;
        for &b in bytes {
            h ^= b as u64;
            h = h.wrapping_mul(FNV_PRIME);
        }
        h
    }

    pub fn embed(&self, name: &str) -> Vec<f64> {
        let chars: Vec<char> = format!("^{}$", name_key(name)).chars().collect();
        let mut v = vec![0.0; self.dim];
        let mut buf = String::new();
        for w in chars.windows(3) {
            buf.clear();
            buf.extend(w);
            let h = self.hash(buf.as_bytes());
            let sign = if h >> 63 == 1 { -1.0 } else { 1.0 };
            v[(h % self.dim as u64) as usize] += sign;
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 0.0 {
            v.iter_mut().for_each(|x| *x /= norm);
        }
        v
    }

    /// One row per class, ids are the class names.
    pub fn embed_class_set(&self, classes: &ClassSet) -> Result<FeatureTable> {
        let ids: Vec<String> = classes.names().map(String::from).collect();
        let rows: Vec<Vec<f64>> = ids.iter().map(|n| self.embed(n)).collect();
        FeatureTable::new(ids, self.dim, rows.concat())
    }
}
