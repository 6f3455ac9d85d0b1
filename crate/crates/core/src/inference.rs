//! End-to-end detection on rasters: batching, tiling, decoding and merging.

use crate::datapipe::{tile_offsets, Raster, Sample, TileSpec};
use crate::error::{Error, Result};
use crate::evaluator::{evaluate, EvalReport};
use crate::model::Model;
use crate::postprocess::{decode, merge_tiles, nms, Detection, PostprocessConfig};

/// Detects on equally sized images whose sides are multiples of the
/// model's coarsest stride.
pub fn detect_batch(
    model: &Model,
    images: &[Raster],
    post: &PostprocessConfig,
) -> Result<Vec<Vec<Detection>>> {
    if images.is_empty() {
        return Ok(Vec::new());
    }
    let x = Raster::batch_tensor(images)?;
    let outputs = model.predict(&x)?;
    let (w, h) = (images[0].width() as f64, images[0].height() as f64);
    Ok((0..images.len())
        .map(|n| {
            let dets = decode(&outputs, n, post.score_threshold, post.pre_nms_top_k, w, h);
            nms(dets, post.iou_threshold)
        })
        .collect())
}

/// Detects on an image of any size by running every tile of `spec`
/// (zero-padded past the image edge) and merging the results in image
/// coordinates.
pub fn detect_image(
    model: &Model,
    image: &Raster,
    spec: &TileSpec,
    post: &PostprocessConfig,
) -> Result<Vec<Detection>> {
    spec.validate()?;
    post.validate()?;
    let t = spec.tile_size;
    let stride = model.config().max_stride();
    if t % stride != 0 {
        return Err(Error::Config(format!(
            "tile size {t} is not a multiple of stride {stride}"
        )));
    }
    let (w, h) = (image.width(), image.height());
    let mut per_tile = Vec::new();
    for (x, y) in window_origins(w, h, spec) {
        let tile = image.crop_padded(x, y, t, t);
        let valid = ((w - x).min(t), (h - y).min(t));
        per_tile.push((
            (x as f64, y as f64),
            detect_window(model, &tile, valid, post)?,
        ));
    }
    Ok(merge_tiles(per_tile, post.iou_threshold))
}

/// Inference window origins over a `w × h` image, row by row.
pub fn window_origins(w: usize, h: usize, spec: &TileSpec) -> Vec<(usize, usize)> {
    let xs = tile_offsets(w, spec);
    tile_offsets(h, spec)
        .into_iter()
        .flat_map(|y| xs.iter().map(move |&x| (x, y)))
        .collect()
}

/// Detections of one window in window coordinates, clipped to the `valid`
/// (unpadded) `(width, height)` and suppressed within the window.
pub fn detect_window(
    model: &Model,
    window: &Raster,
    valid: (usize, usize),
    post: &PostprocessConfig,
) -> Result<Vec<Detection>> {
    let outputs = model.predict(&window.to_tensor())?;
    let dets = decode(
        &outputs,
        0,
        post.score_threshold,
        post.pre_nms_top_k,
        valid.0 as f64,
        valid.1 as f64,
    );
    Ok(nms(dets, post.iou_threshold))
}

/// Runs the model over `samples` and scores the detections against their
/// boxes. Consecutive samples of equal size share a batch.
pub fn evaluate_model(
    model: &Model,
    samples: &[Sample],
    post: &PostprocessConfig,
    batch_size: usize,
) -> Result<EvalReport> {
    let mut dets = Vec::with_capacity(samples.len());
    let mut i = 0;
    while i < samples.len() {
        let size = (samples[i].image.width(), samples[i].image.height());
        let mut j = i + 1;
        while j < samples.len()
            && j - i < batch_size.max(1)
            && (samples[j].image.width(), samples[j].image.height()) == size
        {
            j += 1;
        }
        let images: Vec<Raster> = samples[i..j].iter().map(|s| s.image.clone()).collect();
        dets.extend(detect_batch(model, &images, post)?);
        i = j;
    }
    let gts: Vec<_> = samples.iter().map(|s| s.boxes.clone()).collect();
    Ok(evaluate(&dets, &gts, post.score_threshold))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;

    fn tiny() -> Model {
        let cfg = ModelConfig {
            base_width: 4,
            fpn_channels: 8,
            attention_heads: 2,
            ..Default::default()
        };
        Model::new(cfg, 1).unwrap()
    }

    #[test]
    fn tiled_detection_stays_inside_image() {
        let model = tiny();
        let img = Raster::from_rgb(
            100,
            70,
            (0..100 * 70 * 3).map(|i| (i % 200) as u8).collect(),
        )
        .unwrap();
        let spec = TileSpec {
            tile_size: 64,
            overlap: 16,
            min_box_visibility: 0.3,
        };
        let post = PostprocessConfig {
            score_threshold: 0.0,
            ..Default::default()
        };
        let dets = detect_image(&model, &img, &spec, &post).unwrap();
        assert!(!dets.is_empty());
        for d in &dets {
            assert!(d.bbox.x_min >= 0.0 && d.bbox.x_max <= 100.0 && d.bbox.y_max <= 70.0);
        }
        assert_eq!(dets, detect_image(&model, &img, &spec, &post).unwrap());
    }

    #[test]
    fn rejects_tile_not_multiple_of_stride() {
        let spec = TileSpec {
            tile_size: 100,
            overlap: 10,
            min_box_visibility: 0.3,
        };
        let err = detect_image(
            &tiny(),
            &Raster::new(10, 10),
            &spec,
            &PostprocessConfig::default(),
        );
        assert!(matches!(err, Err(Error::Config(_))));
    }
}
