//! Dataset schemas: ground-truth triplets, category registries, zero-shot
//! splits, synthetic scene generation, and the JSON-lines annotation format.

mod io;
mod splits;
mod synth;

pub use io::{
    load_counts, load_dataset, load_registry, load_split, save_counts, save_dataset,
    save_registry, save_split,
};
pub use splits::make_split;
pub use synth::{generate_synthetic, triplet_counts, SynthSpec};

use std::collections::{BTreeSet, HashMap};

use ndarray::Array3;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// One ground-truth interaction. Boxes are normalized `[cx, cy, w, h]`
/// with every coordinate in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct HOITriplet {
    pub human_box: [f64; 4],
    pub object_box: [f64; 4],
    pub object_class: usize,
    pub verb_class: usize,
    pub hoi_class: usize,
}

impl HOITriplet {
    pub fn validate(&self, registry: &CategoryRegistry) -> Result<()> {
        for (name, b) in [("human", self.human_box), ("object", self.object_box)] {
            if b[2] <= 0.0 || b[3] <= 0.0 {
                return Err(Error::InvalidInput(format!("{name} box has nonpositive extent")));
            }
            let [x1, y1, x2, y2] = crate::geometry::cxcywh_to_xyxy(b);
            if !(0.0..=1.0 + 1e-9).contains(&x1)
                || !(0.0..=1.0 + 1e-9).contains(&y1)
                || x2 > 1.0 + 1e-9
                || y2 > 1.0 + 1e-9
            {
                return Err(Error::InvalidInput(format!("{name} box out of [0,1] range")));
            }
        }
        let expected = registry
            .hoi_id_of(self.verb_class, self.object_class)
            .ok_or_else(|| {
                Error::Registry(format!(
                    "(verb {}, object {}) is not a registered pair",
                    self.verb_class, self.object_class
                ))
            })?;
        if expected != self.hoi_class {
            return Err(Error::Registry(format!(
                "hoi id {} does not match pair id {expected}",
                self.hoi_class
            )));
        }
        Ok(())
    }
}

/// An image with its ground-truth triplets. Pixels are unit-interval
/// intensities in `H x W x C` layout.
#[derive(Clone, Debug)]
pub struct HOISample {
    pub image_id: String,
    pub image: Array3<f32>,
    pub triplets: Vec<HOITriplet>,
}

impl HOISample {
    pub fn height(&self) -> usize {
        self.image.dim().0
    }
    pub fn width(&self) -> usize {
        self.image.dim().1
    }
}

/// Object, verb, and interaction-pair vocabularies plus the annotation
/// phrase for each pair. Immutable after construction.
#[derive(Clone, Debug)]
pub struct CategoryRegistry {
    objects: Vec<String>,
    verbs: Vec<String>,
    hoi_pairs: Vec<(usize, usize)>,
    phrases: Vec<String>,
    pair_index: HashMap<(usize, usize), usize>,
}

impl CategoryRegistry {
    /// `hoi_pairs` are `(verb, object)` index pairs; `phrases[i]` annotates
    /// pair `i`.
    pub fn new(
        objects: Vec<String>,
        verbs: Vec<String>,
        hoi_pairs: Vec<(usize, usize)>,
        phrases: Vec<String>,
    ) -> Result<Self> {
        if phrases.len() != hoi_pairs.len() {
            return Err(Error::Registry(format!(
                "{} phrases for {} pairs",
                phrases.len(),
                hoi_pairs.len()
            )));
        }
        let mut pair_index = HashMap::new();
        for (i, &(v, o)) in hoi_pairs.iter().enumerate() {
            if v >= verbs.len() || o >= objects.len() {
                return Err(Error::Registry(format!("pair ({v}, {o}) out of range")));
            }
            if pair_index.insert((v, o), i).is_some() {
                return Err(Error::Registry(format!("duplicate pair ({v}, {o})")));
            }
        }
        Ok(Self {
            objects,
            verbs,
            hoi_pairs,
            phrases,
            pair_index,
        })
    }

    pub fn n_objects(&self) -> usize {
        self.objects.len()
    }
    pub fn n_verbs(&self) -> usize {
        self.verbs.len()
    }
    pub fn n_hoi(&self) -> usize {
        self.hoi_pairs.len()
    }
    pub fn objects(&self) -> &[String] {
        &self.objects
    }
    pub fn verbs(&self) -> &[String] {
        &self.verbs
    }
    pub fn hoi_pairs(&self) -> &[(usize, usize)] {
        &self.hoi_pairs
    }
    pub fn phrase(&self, hoi_id: usize) -> &str {
        &self.phrases[hoi_id]
    }
    pub fn hoi_id_of(&self, verb: usize, object: usize) -> Option<usize> {
        self.pair_index.get(&(verb, object)).copied()
    }
    pub fn verb_of(&self, hoi_id: usize) -> usize {
        self.hoi_pairs[hoi_id].0
    }
    pub fn object_of(&self, hoi_id: usize) -> usize {
        self.hoi_pairs[hoi_id].1
    }
    pub fn object_id(&self, name: &str) -> Option<usize> {
        self.objects.iter().position(|o| o == name)
    }
    pub fn verb_id(&self, name: &str) -> Option<usize> {
        self.verbs.iter().position(|v| v == name)
    }

    /// Stable digest over the vocabulary, used to tie checkpoints to the
    /// category space they were trained on.
    pub fn digest(&self) -> String {
        use sha2::{Digest, Sha256};
        let mut h = Sha256::new();
        for o in &self.objects {
            h.update(o.as_bytes());
            h.update([0]);
        }
        h.update([1]);
        for v in &self.verbs {
            h.update(v.as_bytes());
            h.update([0]);
        }
        h.update([1]);
        for &(v, o) in &self.hoi_pairs {
            h.update(v.to_le_bytes());
            h.update(o.to_le_bytes());
        }
        hex(&h.finalize())
    }
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Zero-shot evaluation regimes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SplitKind {
    #[serde(rename = "RF-UC")]
    RfUc,
    #[serde(rename = "NF-UC")]
    NfUc,
    #[serde(rename = "UO")]
    Uo,
    #[serde(rename = "UV")]
    Uv,
}

impl std::str::FromStr for SplitKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "RF-UC" | "RFUC" => Ok(SplitKind::RfUc),
            "NF-UC" | "NFUC" => Ok(SplitKind::NfUc),
            "UO" => Ok(SplitKind::Uo),
            "UV" => Ok(SplitKind::Uv),
            other => Err(Error::InvalidInput(format!("unknown split kind: {other}"))),
        }
    }
}

/// A seen/unseen partition of the interaction pairs.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct ZeroShotSplit {
    pub kind: SplitKind,
    pub unseen_hoi_ids: BTreeSet<usize>,
    pub seen_hoi_ids: BTreeSet<usize>,
    #[serde(default)]
    pub unseen_objects: BTreeSet<usize>,
    #[serde(default)]
    pub unseen_verbs: BTreeSet<usize>,
}

impl ZeroShotSplit {
    /// Exhaustive consistency check against a registry: the two sets
    /// partition the pairs, and no unseen object/verb leaks into a seen pair.
    pub fn validate(&self, registry: &CategoryRegistry) -> Result<()> {
        let all: BTreeSet<usize> = (0..registry.n_hoi()).collect();
        let union: BTreeSet<usize> = self.seen_hoi_ids.union(&self.unseen_hoi_ids).copied().collect();
        if union != all || !self.seen_hoi_ids.is_disjoint(&self.unseen_hoi_ids) {
            return Err(Error::InvalidInput(
                "seen/unseen sets do not partition the hoi pairs".into(),
            ));
        }
        for &id in &self.seen_hoi_ids {
            let (v, o) = registry.hoi_pairs()[id];
            if self.unseen_objects.contains(&o) {
                return Err(Error::InvalidInput(format!(
                    "unseen object {o} appears in seen pair {id}"
                )));
            }
            if self.unseen_verbs.contains(&v) {
                return Err(Error::InvalidInput(format!(
                    "unseen verb {v} appears in seen pair {id}"
                )));
            }
        }
        Ok(())
    }

    /// Digest binding a checkpoint to the exact split it was trained under.
    pub fn digest(&self) -> String {
        use sha2::{Digest, Sha256};
        let mut h = Sha256::new();
        h.update(serde_json::to_vec(self).expect("split serializes"));
        hex(&h.finalize())
    }
}
