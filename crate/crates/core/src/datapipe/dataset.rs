use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::boxes::BBox;
use crate::error::{Error, Result};

use super::annotations::{load_annotations, write_annotations, AnnotationRecord};
use super::raster::Raster;
use super::synth::{synth_scene, SyntheticSceneConfig};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const ANNOTATION_FILE: &str = "annotations.csv";

/// One image with its ground-truth boxes.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub id: String,
    pub image: Raster,
    pub boxes: Vec<BBox>,
}

/// Reproducibility record for a generated dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthManifest {
    pub seed: u64,
    pub config: SyntheticSceneConfig,
    /// Annotation table, relative to the dataset directory.
    pub annotations: String,
    pub images: Vec<ManifestEntry>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub file: String,
    pub seed: u64,
    pub n_boxes: usize,
}

/// Per-image seed derived from the dataset seed.
pub fn scene_seed(seed: u64, index: usize) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15)
        .wrapping_add(index as u64)
}

/// In-memory synthetic dataset of `n` scenes.
pub fn synth_samples(cfg: &SyntheticSceneConfig, n: usize, seed: u64) -> Result<Vec<Sample>> {
    (0..n)
        .map(|i| {
            let s = synth_scene(cfg, scene_seed(seed, i))?;
            Ok(Sample {
                id: format!("scene_{i:04}.png"),
                image: s.image,
                boxes: s.boxes,
            })
        })
        .collect()
}

/// Writes `n` synthetic scenes as PNGs plus an annotation table and manifest.
pub fn write_synth_dataset(
    dir: &Path,
    cfg: &SyntheticSceneConfig,
    n: usize,
    seed: u64,
) -> Result<SynthManifest> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let samples = synth_samples(cfg, n, seed)?;
    let mut records = Vec::new();
    let mut images = Vec::with_capacity(n);
    for (i, s) in samples.iter().enumerate() {
        s.image.save_png(&dir.join(&s.id))?;
        records.extend(s.boxes.iter().map(|&bbox| AnnotationRecord {
            image_path: s.id.clone(),
            bbox,
            source: "synthetic".into(),
        }));
        images.push(ManifestEntry {
            file: s.id.clone(),
            seed: scene_seed(seed, i),
            n_boxes: s.boxes.len(),
        });
    }
    write_annotations(&dir.join(ANNOTATION_FILE), &records)?;
    let manifest = SynthManifest {
        seed,
        config: cfg.clone(),
        annotations: ANNOTATION_FILE.into(),
        images,
    };
    let path = dir.join(MANIFEST_FILE);
    let json = serde_json::to_vec_pretty(&manifest)?;
    std::fs::write(&path, json).map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}

/// Loads a dataset directory.
///
/// With a manifest, every listed image is loaded (including ones without
/// boxes); otherwise the images named in `annotations.csv`. Boxes are clamped
/// to the image and dropped if that leaves no area.
pub fn load_dataset(dir: &Path) -> Result<(Vec<Sample>, usize)> {
    let manifest_path = dir.join(MANIFEST_FILE);
    let (table, files): (PathBuf, Option<Vec<String>>) = if manifest_path.exists() {
        let bytes = std::fs::read(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
        let m: SynthManifest = serde_json::from_slice(&bytes)?;
        (
            dir.join(&m.annotations),
            Some(m.images.into_iter().map(|e| e.file).collect()),
        )
    } else {
        (dir.join(ANNOTATION_FILE), None)
    };
    let set = load_annotations(&table)?;
    let mut dropped = set.dropped;
    let mut grouped = set.by_image();
    let files = files.unwrap_or_else(|| grouped.keys().cloned().collect());
    let mut out = Vec::with_capacity(files.len());
    for f in files {
        let image = Raster::load_png(&dir.join(&f))?;
        let (w, h) = (image.width() as f64, image.height() as f64);
        let mut boxes = Vec::new();
        for b in grouped.remove(&f).unwrap_or_default() {
            let c = b.clamp_to(w, h);
            if c.is_degenerate() {
                dropped += 1;
            } else {
                boxes.push(c);
            }
        }
        out.push(Sample {
            id: f,
            image,
            boxes,
        });
    }
    Ok((out, dropped))
}
