use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt::Write;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::coverage::CoverageDelta;
use crate::eval::BBox;
use crate::mutation::MutationRecord;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Stage {
    #[serde(rename = "1")]
    One,
    #[serde(rename = "2")]
    Two,
    #[serde(rename = "adversarial")]
    Adversarial,
}

impl Stage {
    pub fn tag(self) -> &'static str {
        match self {
            Self::One => "s1",
            Self::Two => "s2",
            Self::Adversarial => "adv",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BugSource {
    Natural { record: MutationRecord },
    Adversarial { tag: String },
}

/// An (original, mutant) pair that satisfied the bug predicate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bug {
    pub original_id: String,
    pub mutant_id: String,
    /// Stage-1 mutant a stage-2 bug was derived from.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parent_id: Option<String>,
    /// Annotations of the mutant.
    pub boxes: Vec<BBox>,
    pub ap_orig: f64,
    pub ap_mut: f64,
    pub ratio: f64,
    pub coverage: Vec<CoverageDelta>,
    pub stage: Stage,
    pub round: usize,
    pub source: BugSource,
    /// SHA-256 of the mutant's 8-bit pixels, lowercase hex.
    pub hash: String,
}

/// SHA-256 over the 8-bit quantized pixels.
pub fn image_hash(img: &Tensor) -> String {
    let digest = Sha256::digest(img.to_u8());
    let mut s = String::with_capacity(64);
    for b in digest.iter() {
        let _ = write!(s, "{b:02x}");
    }
    s
}

pub fn mutant_id(original: &str, stage: Stage, round: usize, hash: &str) -> String {
    format!("{original}__{}_r{round}_{}", stage.tag(), &hash[..hash.len().min(8)])
}

/// Append-only bug collection, deduplicated on mutant hash.
#[derive(Debug, Clone, Default)]
pub struct BugStore {
    bugs: Vec<Bug>,
    images: Vec<Tensor>,
    hashes: BTreeSet<String>,
}

impl BugStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds a bug unless its hash is already stored; returns whether added.
    pub fn insert(&mut self, bug: Bug, image: Tensor) -> bool {
        if !self.hashes.insert(bug.hash.clone()) {
            return false;
        }
        self.bugs.push(bug);
        self.images.push(image);
        true
    }

    pub fn len(&self) -> usize {
        self.bugs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bugs.is_empty()
    }

    pub fn bugs(&self) -> &[Bug] {
        &self.bugs
    }

    pub fn image(&self, i: usize) -> &Tensor {
        &self.images[i]
    }

    pub fn iter(&self) -> impl Iterator<Item = (&Bug, &Tensor)> {
        self.bugs.iter().zip(&self.images)
    }

    pub fn hashes(&self) -> &BTreeSet<String> {
        &self.hashes
    }

    pub fn contains_hash(&self, h: &str) -> bool {
        self.hashes.contains(h)
    }

    pub fn count_stage(&self, stage: Stage) -> usize {
        self.bugs.iter().filter(|b| b.stage == stage).count()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Shape;
    use alloc::string::ToString;
    use alloc::vec;

    fn bug(hash: &str) -> Bug {
        Bug {
            original_id: "a".into(),
            mutant_id: mutant_id("a", Stage::One, 0, hash),
            parent_id: None,
            boxes: vec![],
            ap_orig: 1.0,
            ap_mut: 0.0,
            ratio: 0.0,
            coverage: vec![],
            stage: Stage::One,
            round: 0,
            source: BugSource::Adversarial { tag: "t".to_string() },
            hash: hash.into(),
        }
    }

    #[test]
    fn dedups_on_hash() {
        let img = Tensor::zeros(Shape::new(2, 2, 3));
        let mut s = BugStore::new();
        assert!(s.insert(bug("abc"), img.clone()));
        assert!(!s.insert(bug("abc"), img.clone()));
        assert!(s.insert(bug("abd"), img));
        assert_eq!(s.len(), 2);
    }

    #[test]
    fn hash_is_sha256_of_bytes() {
        // sha256 of 12 zero bytes.
        let h = image_hash(&Tensor::zeros(Shape::new(2, 2, 3)));
        assert_eq!(h, "15ec7bf0b50732b49f8228e07d24365338f9e3ab994b00af08e5a3bffe55fd8b");
        assert_eq!(mutant_id("x", Stage::Two, 3, &h), "x__s2_r3_15ec7bf0");
    }
}
