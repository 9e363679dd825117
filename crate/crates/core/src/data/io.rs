//! Annotation, registry, split, and count files.
//!
//! Annotations are JSON lines, one image per line, boxes in corner pixels:
//! `{"image_id", "width", "height", "file" | "pixels", "triplets": [{"h_box",
//! "o_box", "object", "verb"}]}`. Loading normalizes boxes to center form.

use std::collections::HashMap;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use ndarray::Array3;
use serde::{Deserialize, Serialize};

use super::{CategoryRegistry, HOISample, HOITriplet, ZeroShotSplit};
use crate::geometry::{cxcywh_to_xyxy, xyxy_to_cxcywh};
use crate::{Error, Result};

#[derive(Serialize, Deserialize)]
struct TripletRecord {
    h_box: [f64; 4],
    o_box: [f64; 4],
    object: String,
    verb: String,
}

#[derive(Serialize, Deserialize)]
struct SampleRecord {
    image_id: String,
    width: usize,
    height: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    file: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pixels: Option<Vec<Vec<Vec<f32>>>>,
    triplets: Vec<TripletRecord>,
}

fn parse_err(line: usize, msg: impl std::fmt::Display) -> Error {
    Error::Parse {
        line,
        msg: msg.to_string(),
    }
}

/// Load a JSON-lines annotation file, validating every record against the
/// registry and normalizing boxes from corner pixels to center form.
pub fn load_dataset(path: &Path, registry: &CategoryRegistry) -> Result<Vec<HOISample>> {
    let file = fs::File::open(path)?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    let mut samples = Vec::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let lineno = idx + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: SampleRecord =
            serde_json::from_str(&line).map_err(|e| parse_err(lineno, e))?;
        if rec.width == 0 || rec.height == 0 {
            return Err(parse_err(lineno, "zero image dimensions"));
        }
        let image = match (&rec.file, &rec.pixels) {
            (Some(rel), None) => read_png(&base.join(rel))
                .map_err(|e| parse_err(lineno, format!("image {rel}: {e}")))?,
            (None, Some(px)) => pixels_to_array(px).map_err(|e| parse_err(lineno, e))?,
            _ => return Err(parse_err(lineno, "record needs exactly one of `file` or `pixels`")),
        };
        if image.dim().0 != rec.height || image.dim().1 != rec.width {
            return Err(parse_err(
                lineno,
                format!(
                    "image is {}x{} but record says {}x{}",
                    image.dim().0,
                    image.dim().1,
                    rec.height,
                    rec.width
                ),
            ));
        }
        let mut triplets = Vec::with_capacity(rec.triplets.len());
        for t in &rec.triplets {
            let object_class = registry.object_id(&t.object).ok_or_else(|| {
                Error::Registry(format!("line {lineno}: unknown object {:?}", t.object))
            })?;
            let verb_class = registry.verb_id(&t.verb).ok_or_else(|| {
                Error::Registry(format!("line {lineno}: unknown verb {:?}", t.verb))
            })?;
            let hoi_class = registry.hoi_id_of(verb_class, object_class).ok_or_else(|| {
                Error::Registry(format!(
                    "line {lineno}: ({}, {}) is not a registered pair",
                    t.verb, t.object
                ))
            })?;
            let triplet = HOITriplet {
                human_box: normalize_box(t.h_box, rec.width, rec.height, lineno)?,
                object_box: normalize_box(t.o_box, rec.width, rec.height, lineno)?,
                object_class,
                verb_class,
                hoi_class,
            };
            triplet.validate(registry)?;
            triplets.push(triplet);
        }
        samples.push(HOISample {
            image_id: rec.image_id,
            image,
            triplets,
        });
    }
    Ok(samples)
}

/// Write samples back out. With `image_dir`, pixel data goes to one PNG per
/// image and records carry relative `file` paths; otherwise pixels inline.
pub fn save_dataset(
    samples: &[HOISample],
    registry: &CategoryRegistry,
    path: &Path,
    image_dir: Option<&Path>,
) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    let mut out = fs::File::create(path)?;
    for s in samples {
        let (h, w) = (s.height(), s.width());
        let (file, pixels) = match image_dir {
            Some(dir) => {
                fs::create_dir_all(dir)?;
                let png = dir.join(format!("{}.png", s.image_id));
                write_png(&png, &s.image)?;
                let rel = png
                    .strip_prefix(base)
                    .map(|p| p.to_string_lossy().into_owned())
                    .unwrap_or_else(|_| png.to_string_lossy().into_owned());
                (Some(rel), None)
            }
            None => (None, Some(array_to_pixels(&s.image))),
        };
        let rec = SampleRecord {
            image_id: s.image_id.clone(),
            width: w,
            height: h,
            file,
            pixels,
            triplets: s
                .triplets
                .iter()
                .map(|t| TripletRecord {
                    h_box: denormalize_box(t.human_box, w, h),
                    o_box: denormalize_box(t.object_box, w, h),
                    object: registry.objects()[t.object_class].clone(),
                    verb: registry.verbs()[t.verb_class].clone(),
                })
                .collect(),
        };
        serde_json::to_writer(&mut out, &rec)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

fn normalize_box(xyxy: [f64; 4], width: usize, height: usize, lineno: usize) -> Result<[f64; 4]> {
    let [x1, y1, x2, y2] = xyxy;
    if !(x2 > x1 && y2 > y1) {
        return Err(parse_err(lineno, format!("degenerate box {xyxy:?}")));
    }
    if x1 < 0.0 || y1 < 0.0 || x2 > width as f64 || y2 > height as f64 {
        return Err(parse_err(
            lineno,
            format!("box {xyxy:?} outside {width}x{height} image"),
        ));
    }
    Ok(xyxy_to_cxcywh([
        x1 / width as f64,
        y1 / height as f64,
        x2 / width as f64,
        y2 / height as f64,
    ]))
}

fn denormalize_box(cxcywh: [f64; 4], width: usize, height: usize) -> [f64; 4] {
    let [x1, y1, x2, y2] = cxcywh_to_xyxy(cxcywh);
    [
        x1 * width as f64,
        y1 * height as f64,
        x2 * width as f64,
        y2 * height as f64,
    ]
}

fn pixels_to_array(px: &[Vec<Vec<f32>>]) -> std::result::Result<Array3<f32>, String> {
    let h = px.len();
    if h == 0 {
        return Err("empty pixel array".into());
    }
    let w = px[0].len();
    let c = px[0].first().map(Vec::len).unwrap_or(0);
    if w == 0 || c == 0 {
        return Err("empty pixel rows".into());
    }
    let mut arr = Array3::zeros((h, w, c));
    for (i, row) in px.iter().enumerate() {
        if row.len() != w {
            return Err(format!("ragged pixel row {i}"));
        }
        for (j, p) in row.iter().enumerate() {
            if p.len() != c {
                return Err(format!("ragged pixel at ({i},{j})"));
            }
            for (k, &v) in p.iter().enumerate() {
                arr[[i, j, k]] = v;
            }
        }
    }
    Ok(arr)
}

fn array_to_pixels(image: &Array3<f32>) -> Vec<Vec<Vec<f32>>> {
    let (h, w, c) = image.dim();
    (0..h)
        .map(|i| {
            (0..w)
                .map(|j| (0..c).map(|k| image[[i, j, k]]).collect())
                .collect()
        })
        .collect()
}

pub(crate) fn read_png(path: &Path) -> Result<Array3<f32>> {
    let img = image::open(path)
        .map_err(|e| Error::InvalidInput(format!("{}: {e}", path.display())))?
        .into_rgb8();
    let (w, h) = img.dimensions();
    let mut arr = Array3::zeros((h as usize, w as usize, 3));
    for (x, y, p) in img.enumerate_pixels() {
        for k in 0..3 {
            arr[[y as usize, x as usize, k]] = p.0[k] as f32 / 255.0;
        }
    }
    Ok(arr)
}

pub(crate) fn write_png(path: &Path, image: &Array3<f32>) -> Result<()> {
    let (h, w, c) = image.dim();
    if c != 3 {
        return Err(Error::InvalidInput(format!("png writer expects 3 channels, got {c}")));
    }
    let mut img = image::RgbImage::new(w as u32, h as u32);
    for (x, y, p) in img.enumerate_pixels_mut() {
        for k in 0..3 {
            let v = (image[[y as usize, x as usize, k]].clamp(0.0, 1.0) * 255.0).round() as u8;
            p.0[k] = v;
        }
    }
    img.save(path)
        .map_err(|e| Error::InvalidInput(format!("{}: {e}", path.display())))
}

pub fn load_registry(path: &Path) -> Result<CategoryRegistry> {
    #[derive(Deserialize)]
    struct RegistryFile {
        objects: Vec<String>,
        verbs: Vec<String>,
        hoi_pairs: Vec<(usize, usize)>,
        phrases: HashMap<String, String>,
    }
    let raw: RegistryFile = serde_json::from_reader(fs::File::open(path)?)?;
    let mut phrases = vec![String::new(); raw.hoi_pairs.len()];
    for (k, v) in raw.phrases {
        let id: usize = k
            .parse()
            .map_err(|_| Error::Registry(format!("bad phrase key {k:?}")))?;
        if id >= phrases.len() {
            return Err(Error::Registry(format!("phrase key {id} out of range")));
        }
        phrases[id] = v;
    }
    if phrases.iter().any(String::is_empty) {
        return Err(Error::Registry("missing phrase for some hoi id".into()));
    }
    CategoryRegistry::new(raw.objects, raw.verbs, raw.hoi_pairs, phrases)
}

pub fn save_registry(registry: &CategoryRegistry, path: &Path) -> Result<()> {
    #[derive(Serialize)]
    struct RegistryFile<'a> {
        objects: &'a [String],
        verbs: &'a [String],
        hoi_pairs: &'a [(usize, usize)],
        phrases: std::collections::BTreeMap<String, &'a str>,
    }
    let phrases = (0..registry.n_hoi())
        .map(|i| (i.to_string(), registry.phrase(i)))
        .collect();
    let file = RegistryFile {
        objects: registry.objects(),
        verbs: registry.verbs(),
        hoi_pairs: registry.hoi_pairs(),
        phrases,
    };
    fs::write(path, serde_json::to_string_pretty(&file)?)?;
    Ok(())
}

pub fn load_split(path: &Path) -> Result<ZeroShotSplit> {
    Ok(serde_json::from_reader(fs::File::open(path)?)?)
}

pub fn save_split(split: &ZeroShotSplit, path: &Path) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(split)?)?;
    Ok(())
}

pub fn load_counts(path: &Path) -> Result<HashMap<usize, usize>> {
    let raw: HashMap<String, usize> = serde_json::from_reader(fs::File::open(path)?)?;
    raw.into_iter()
        .map(|(k, v)| {
            k.parse::<usize>()
                .map(|id| (id, v))
                .map_err(|_| Error::InvalidInput(format!("bad count key {k:?}")))
        })
        .collect()
}

pub fn save_counts(counts: &HashMap<usize, usize>, path: &Path) -> Result<()> {
    let ordered: std::collections::BTreeMap<String, usize> =
        counts.iter().map(|(&k, &v)| (k.to_string(), v)).collect();
    fs::write(path, serde_json::to_string_pretty(&ordered)?)?;
    Ok(())
}
