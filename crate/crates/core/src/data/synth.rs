//! Synthetic scene generation.
//!
//! Each verb is a deterministic geometric relation between a fixed-color
//! "human" glyph and a per-class-colored object glyph, so the interaction is
//! recoverable from pixels alone. Intensities sit on the 1/255 grid, which
//! keeps PNG round-trips exact.

use std::collections::HashMap;

use ndarray::Array3;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{CategoryRegistry, HOISample, HOITriplet};
use crate::geometry::xyxy_to_cxcywh;
use crate::{Error, Result};

const HUMAN_COLOR: [u8; 3] = [217, 77, 77];
const OBJECT_COLORS: [[u8; 3]; 8] = [
    [77, 128, 230],
    [76, 217, 100],
    [255, 204, 0],
    [171, 77, 217],
    [77, 217, 217],
    [255, 128, 0],
    [153, 102, 51],
    [230, 230, 230],
];
const OBJECT_NAMES: [&str; 8] = ["box", "ball", "ring", "bar", "disk", "block", "cone", "tile"];
const VERB_NAMES: [&str; 8] = ["hold", "ride", "push", "lift", "pull", "kick", "flick", "carry"];

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SynthSpec {
    #[serde(default = "default_image_size")]
    pub image_size: usize,
    pub num_objects: usize,
    pub num_verbs: usize,
    pub num_samples: usize,
    #[serde(default = "default_max_triplets")]
    pub max_triplets: usize,
    /// Sampling weights over hoi ids; uniform when absent.
    #[serde(default)]
    pub hoi_weights: Option<Vec<f64>>,
}

fn default_image_size() -> usize {
    64
}
fn default_max_triplets() -> usize {
    2
}

#[derive(Clone, Copy)]
struct Rect {
    x: usize,
    y: usize,
    w: usize,
    h: usize,
}

impl Rect {
    fn fits(&self, size: usize) -> bool {
        self.w >= 3 && self.h >= 3 && self.x + self.w <= size && self.y + self.h <= size
    }

    fn normalized(&self, size: usize) -> [f64; 4] {
        let s = size as f64;
        xyxy_to_cxcywh([
            self.x as f64 / s,
            self.y as f64 / s,
            (self.x + self.w) as f64 / s,
            (self.y + self.h) as f64 / s,
        ])
    }
}

/// Deterministically generate a dataset and its registry from `(spec, seed)`.
pub fn generate_synthetic(spec: &SynthSpec, seed: u64) -> Result<(Vec<HOISample>, CategoryRegistry)> {
    validate_spec(spec)?;
    let registry = build_registry(spec)?;
    let n_hoi = registry.n_hoi();
    let weights: Vec<f64> = match &spec.hoi_weights {
        Some(w) => {
            if w.len() != n_hoi {
                return Err(Error::InvalidSpec(format!(
                    "{} weights for {n_hoi} hoi classes",
                    w.len()
                )));
            }
            if w.iter().any(|&x| x < 0.0) || w.iter().sum::<f64>() <= 0.0 {
                return Err(Error::InvalidSpec("weights must be nonnegative with positive sum".into()));
            }
            w.clone()
        }
        None => vec![1.0; n_hoi],
    };
    let cumulative: Vec<f64> = weights
        .iter()
        .scan(0.0, |acc, &w| {
            *acc += w;
            Some(*acc)
        })
        .collect();
    let total_weight = *cumulative.last().unwrap();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut samples = Vec::with_capacity(spec.num_samples);
    for idx in 0..spec.num_samples {
        let mut image = Array3::zeros((spec.image_size, spec.image_size, 3));
        let n_triplets = 1 + rng.random_range(0..spec.max_triplets.max(1));
        let mut triplets = Vec::with_capacity(n_triplets);
        for _ in 0..n_triplets {
            let draw = rng.random_range(0.0..total_weight);
            let hoi = cumulative.partition_point(|&c| c <= draw).min(n_hoi - 1);
            let (verb, object) = registry.hoi_pairs()[hoi];
            let (human, obj) = place_pair(&mut rng, spec.image_size, verb);
            fill(&mut image, &human, HUMAN_COLOR);
            fill(&mut image, &obj, OBJECT_COLORS[object]);
            triplets.push(HOITriplet {
                human_box: human.normalized(spec.image_size),
                object_box: obj.normalized(spec.image_size),
                object_class: object,
                verb_class: verb,
                hoi_class: hoi,
            });
        }
        samples.push(HOISample {
            image_id: format!("synth-{seed}-{idx:05}"),
            image,
            triplets,
        });
    }
    Ok((samples, registry))
}

fn validate_spec(spec: &SynthSpec) -> Result<()> {
    if spec.num_objects == 0 || spec.num_verbs == 0 {
        return Err(Error::InvalidSpec("object and verb counts must be positive".into()));
    }
    if spec.num_objects > OBJECT_COLORS.len() {
        return Err(Error::InvalidSpec(format!(
            "at most {} object classes supported",
            OBJECT_COLORS.len()
        )));
    }
    if spec.num_verbs > VERB_NAMES.len() {
        return Err(Error::InvalidSpec(format!(
            "at most {} geometric verbs supported",
            VERB_NAMES.len()
        )));
    }
    if spec.image_size < 32 {
        return Err(Error::InvalidSpec("image size must be at least 32".into()));
    }
    Ok(())
}

fn build_registry(spec: &SynthSpec) -> Result<CategoryRegistry> {
    let objects: Vec<String> = OBJECT_NAMES[..spec.num_objects].iter().map(|s| s.to_string()).collect();
    let verbs: Vec<String> = VERB_NAMES[..spec.num_verbs].iter().map(|s| s.to_string()).collect();
    let mut pairs = Vec::new();
    let mut phrases = Vec::new();
    for v in 0..verbs.len() {
        for o in 0..objects.len() {
            pairs.push((v, o));
            phrases.push(format!("human {} {}", verbs[v], objects[o]));
        }
    }
    CategoryRegistry::new(objects, verbs, pairs, phrases)
}

/// Sample a (human, object) rect pair realizing the verb's relation, retrying
/// until both fit the canvas. Falls back to a centered layout.
fn place_pair(rng: &mut ChaCha8Rng, size: usize, verb: usize) -> (Rect, Rect) {
    let s = size as f64;
    for _ in 0..64 {
        let hw = rng.random_range((s * 0.20) as usize..=(s * 0.32) as usize);
        let hh = rng.random_range((s * 0.25) as usize..=(s * 0.38) as usize);
        let ow = rng.random_range((s * 0.11) as usize..=(s * 0.20) as usize);
        let oh = rng.random_range((s * 0.11) as usize..=(s * 0.20) as usize);
        let hx = rng.random_range(0..size.saturating_sub(hw).max(1));
        let hy = rng.random_range(0..size.saturating_sub(hh).max(1));
        let human = Rect { x: hx, y: hy, w: hw, h: hh };
        if !human.fits(size) {
            continue;
        }
        if let Some(obj) = place_object(rng, size, &human, ow, oh, verb) {
            return (human, obj);
        }
    }
    // deterministic fallback: centered human, relation object stacked below
    let human = Rect {
        x: size / 4,
        y: size / 4,
        w: size / 4,
        h: size / 4,
    };
    let obj = Rect {
        x: size / 4 + 2,
        y: size / 4 + 2,
        w: size / 8,
        h: size / 8,
    };
    (human, obj)
}

fn place_object(
    rng: &mut ChaCha8Rng,
    size: usize,
    human: &Rect,
    ow: usize,
    oh: usize,
    verb: usize,
) -> Option<Rect> {
    let gap = 1 + rng.random_range(0..2usize);
    let isize = size as isize;
    let (hx, hy, hw, hh) = (human.x as isize, human.y as isize, human.w as isize, human.h as isize);
    let (ow_i, oh_i) = (ow as isize, oh as isize);
    let overlap_x = || -> isize { hx + rng_range_i(rng, -(ow_i / 2) + 1, hw - ow_i / 2 - 1) };
    let mut rng2 = rng.clone();
    let overlap_y = move || -> isize { hy + rng_range_i(&mut rng2, -(oh_i / 2) + 1, hh - oh_i / 2 - 1) };
    let (ox, oy) = match verb % 8 {
        // hold: object center inside the human box
        0 => {
            let cx = hx + rng_range_i(rng, 2, hw - 2);
            let cy = hy + rng_range_i(rng, 2, hh - 2);
            (cx - ow_i / 2, cy - oh_i / 2)
        }
        // ride: human sits on top of the object
        1 => (overlap_x(), hy + hh),
        // push: human immediately left of the object
        2 => (hx + hw + gap as isize, overlap_y()),
        // lift: object directly above the human
        3 => (overlap_x(), hy - oh_i),
        // pull: human immediately right of the object
        4 => (hx - ow_i - gap as isize, overlap_y()),
        // kick: object past the human's bottom-right corner
        5 => (hx + hw + gap as isize, hy + hh + gap as isize),
        // flick: object past the human's top-left corner
        6 => (hx - ow_i - gap as isize, hy - oh_i - gap as isize),
        // carry: object strictly inside the human box
        _ => {
            let w = ow_i.min(hw - 4).max(3);
            let h = oh_i.min(hh - 4).max(3);
            let ox = hx + rng_range_i(rng, 2, hw - w - 2);
            let oy = hy + rng_range_i(rng, 2, hh - h - 2);
            let rect = Rect {
                x: ox.max(0) as usize,
                y: oy.max(0) as usize,
                w: w as usize,
                h: h as usize,
            };
            return rect.fits(size).then_some(rect);
        }
    };
    if ox < 0 || oy < 0 || ox + ow_i > isize || oy + oh_i > isize {
        return None;
    }
    let rect = Rect {
        x: ox as usize,
        y: oy as usize,
        w: ow,
        h: oh,
    };
    rect.fits(size).then_some(rect)
}

fn rng_range_i(rng: &mut ChaCha8Rng, lo: isize, hi: isize) -> isize {
    if hi <= lo {
        lo
    } else {
        rng.random_range(lo..=hi)
    }
}

fn fill(image: &mut Array3<f32>, r: &Rect, color: [u8; 3]) {
    for y in r.y..r.y + r.h {
        for x in r.x..r.x + r.w {
            for c in 0..3 {
                image[[y, x, c]] = color[c] as f32 / 255.0;
            }
        }
    }
}

/// Training-frequency counts per hoi id over a sample list.
pub fn triplet_counts(samples: &[HOISample]) -> HashMap<usize, usize> {
    let mut counts = HashMap::new();
    for s in samples {
        for t in &s.triplets {
            *counts.entry(t.hoi_class).or_insert(0) += 1;
        }
    }
    counts
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(objects: usize, verbs: usize, samples: usize) -> SynthSpec {
        SynthSpec {
            image_size: 64,
            num_objects: objects,
            num_verbs: verbs,
            num_samples: samples,
            max_triplets: 2,
            hoi_weights: None,
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let s = spec(3, 4, 20);
        let (a, ra) = generate_synthetic(&s, 7).unwrap();
        let (b, rb) = generate_synthetic(&s, 7).unwrap();
        assert_eq!(ra.n_hoi(), rb.n_hoi());
        assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(b.iter()) {
            assert_eq!(x.image_id, y.image_id);
            assert_eq!(x.image, y.image);
            assert_eq!(x.triplets, y.triplets);
        }
        let (c, _) = generate_synthetic(&s, 8).unwrap();
        assert!(a.iter().zip(c.iter()).any(|(x, y)| x.image != y.image));
    }

    #[test]
    fn every_sample_has_a_triplet_and_valid_boxes() {
        let s = spec(3, 4, 25);
        let (samples, registry) = generate_synthetic(&s, 11).unwrap();
        assert_eq!(samples.len(), 25);
        for sample in &samples {
            assert!(!sample.triplets.is_empty());
            for t in &sample.triplets {
                t.validate(&registry).unwrap();
            }
        }
    }

    #[test]
    fn weighted_frequencies_skew_counts() {
        let s = SynthSpec {
            hoi_weights: Some(vec![10.0, 1.0]),
            max_triplets: 1,
            ..spec(2, 1, 110)
        };
        let (samples, registry) = generate_synthetic(&s, 3).unwrap();
        assert_eq!(registry.n_hoi(), 2);
        let counts = triplet_counts(&samples);
        let total: usize = counts.values().sum();
        let n_triplets: usize = samples.iter().map(|s| s.triplets.len()).sum();
        assert_eq!(total, n_triplets);
        assert_eq!(total, 110);
        let c0 = counts.get(&0).copied().unwrap_or(0);
        let c1 = counts.get(&1).copied().unwrap_or(0);
        assert!(c0 > 5 * c1, "c0={c0} c1={c1}");
    }

    #[test]
    fn minimal_spec_yields_single_pair_registry() {
        let (samples, registry) = generate_synthetic(&spec(1, 1, 1), 0).unwrap();
        assert_eq!(registry.n_hoi(), 1);
        assert_eq!(samples.len(), 1);
    }

    #[test]
    fn zero_classes_is_invalid() {
        assert!(matches!(
            generate_synthetic(&spec(0, 4, 5), 1),
            Err(crate::Error::InvalidSpec(_))
        ));
        assert!(matches!(
            generate_synthetic(&spec(3, 0, 5), 1),
            Err(crate::Error::InvalidSpec(_))
        ));
    }

    #[test]
    fn pixels_sit_on_the_png_grid() {
        let (samples, _) = generate_synthetic(&spec(2, 2, 3), 5).unwrap();
        for s in &samples {
            for &v in s.image.iter() {
                let scaled = v * 255.0;
                assert!((scaled - scaled.round()).abs() < 1e-5);
            }
        }
    }
}
