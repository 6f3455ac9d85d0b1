//! Detection over geographic areas: viewports, polygons and chunked
//! communities.
//!
//! Every area is processed on one pixel lattice: the covering pixel window
//! of the area's bounding box at the working zoom, cut into inference
//! windows by [`window_origins`]. Chunked runs evaluate the windows near
//! each chunk and merge them globally, so they see exactly the windows a
//! single pass over the whole area would see near the polygon.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::mpsc;

use canopy_core::checkpoint::Checkpoint;
use canopy_core::datapipe::{Raster, TileSpec};
use canopy_core::inference::{detect_image, detect_window, window_origins};
use canopy_core::model::Model;
use canopy_core::postprocess::{merge_tiles, Detection, Frame, PostprocessConfig};
use canopy_core::BBox;
use canopy_geo::mercator::{lonlat_to_pixel, pixel_box_to_geo};
use canopy_geo::{
    chunk_polygon, clip_detections, fetch_rect, GeoPoint, GeoPolygon, PixelRect, TileSource,
    Viewport,
};
use sha2::{Digest, Sha256};

use crate::error::{AppError, Result};

/// A loaded model plus the tiling it runs with.
#[derive(Clone, Debug)]
pub struct Detector {
    pub model: Model,
    /// First 16 hex digits of the SHA-256 of the checkpoint bytes.
    pub checkpoint_id: String,
    pub tiling: TileSpec,
}

impl Detector {
    pub fn load(path: &Path, tiling: TileSpec) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| AppError::store(path, e))?;
        Self::from_bytes(&bytes, tiling)
    }

    pub fn from_bytes(bytes: &[u8], tiling: TileSpec) -> Result<Self> {
        let ckpt = Checkpoint::from_bytes(bytes)?;
        Self::new(ckpt.model, short_hash(bytes), tiling)
    }

    pub fn new(model: Model, checkpoint_id: String, tiling: TileSpec) -> Result<Self> {
        tiling.validate()?;
        let stride = model.config().max_stride();
        if tiling.tile_size % stride != 0 {
            return Err(AppError::BadRequest(format!(
                "inference tile {} is not a multiple of the model stride {stride}",
                tiling.tile_size
            )));
        }
        Ok(Detector {
            model,
            checkpoint_id,
            tiling,
        })
    }
}

pub fn short_hash(bytes: &[u8]) -> String {
    hex::encode(&Sha256::digest(bytes)[..8])
}

/// Postprocessing for a request threshold.
pub fn postprocess_for(threshold: f64, base: &PostprocessConfig) -> Result<PostprocessConfig> {
    let post = PostprocessConfig {
        score_threshold: threshold,
        ..base.clone()
    };
    post.validate()
        .map_err(|e| AppError::BadRequest(e.to_string()))?;
    Ok(post)
}

/// Converts global-pixel detections at `zoom` to the geographic frame.
pub fn to_geo(dets: Vec<Detection>, zoom: u8, tile_px: usize) -> Vec<Detection> {
    dets.into_iter()
        .map(|mut d| {
            d.bbox = pixel_box_to_geo(&d.bbox, zoom, tile_px);
            d.frame = Frame::Geo;
            d
        })
        .collect()
}

/// Detections in global pixels over `rect`, tiled with the detector's
/// windows anchored at the rect's top-left corner.
pub fn detect_rect(
    det: &Detector,
    source: &dyn TileSource,
    rect: &PixelRect,
    post: &PostprocessConfig,
) -> Result<Vec<Detection>> {
    let image = fetch_rect(source, rect)?;
    let dets = detect_image(&det.model, &image, &det.tiling, post)?;
    Ok(dets
        .into_iter()
        .map(|mut d| {
            d.bbox = d.bbox.translate(rect.x as f64, rect.y as f64);
            d
        })
        .collect())
}

/// Geographic detections over a viewport.
pub fn detect_viewport(
    det: &Detector,
    source: &dyn TileSource,
    vp: &Viewport,
    post: &PostprocessConfig,
) -> Result<Vec<Detection>> {
    vp.validate()?;
    let rect = vp.pixel_rect(source.tile_size());
    Ok(to_geo(
        detect_rect(det, source, &rect, post)?,
        vp.zoom,
        source.tile_size(),
    ))
}

/// Detections kept inside a polygon plus the number clipped away.
#[derive(Clone, Debug, PartialEq)]
pub struct Clipped {
    pub detections: Vec<Detection>,
    pub dropped: usize,
}

fn area_rect(poly: &GeoPolygon, zoom: u8, tile_px: usize) -> PixelRect {
    PixelRect::covering(&poly.bbox(), zoom, tile_px)
}

fn clip_global(dets: Vec<Detection>, poly: &GeoPolygon, zoom: u8, tile_px: usize) -> Clipped {
    let out = clip_detections(to_geo(dets, zoom, tile_px), poly);
    Clipped {
        detections: out.kept,
        dropped: out.dropped,
    }
}

/// Single pass over the polygon's covering window, clipped by box center.
pub fn detect_polygon(
    det: &Detector,
    source: &dyn TileSource,
    poly: &GeoPolygon,
    zoom: u8,
    post: &PostprocessConfig,
) -> Result<Clipped> {
    let t = source.tile_size();
    let rect = area_rect(poly, zoom, t);
    Ok(clip_global(
        detect_rect(det, source, &rect, post)?,
        poly,
        zoom,
        t,
    ))
}

/// Chunks of a community and the inference windows each one evaluates.
#[derive(Clone, Debug, PartialEq)]
pub struct ChunkPlan {
    pub zoom: u8,
    pub tile_px: usize,
    /// Covering window of the polygon's bounding box.
    pub rect: PixelRect,
    /// Chunk cells in degrees, row-major.
    pub chunks: Vec<BBox>,
    /// Window origins (relative to `rect`) per chunk.
    pub windows: Vec<Vec<(usize, usize)>>,
}

/// Plans a chunked run. Each chunk takes every window of the area lattice
/// that overlaps the chunk cell grown by `margin_px` on all sides.
pub fn plan_chunks(
    poly: &GeoPolygon,
    zoom: u8,
    tile_px: usize,
    tiling: &TileSpec,
    chunk_deg: f64,
    margin_px: f64,
) -> Result<ChunkPlan> {
    let rect = area_rect(poly, zoom, tile_px);
    let chunks = chunk_polygon(poly, chunk_deg)?;
    let origins = window_origins(rect.width, rect.height, tiling);
    let t = tiling.tile_size as f64;
    let windows = chunks
        .iter()
        .map(|c| {
            let (x0, y0) = lonlat_to_pixel(
                GeoPoint {
                    lon: c.x_min,
                    lat: c.y_max,
                },
                zoom,
                tile_px,
            );
            let (x1, y1) = lonlat_to_pixel(
                GeoPoint {
                    lon: c.x_max,
                    lat: c.y_min,
                },
                zoom,
                tile_px,
            );
            let ex0 = x0 - rect.x as f64 - margin_px;
            let ey0 = y0 - rect.y as f64 - margin_px;
            let ex1 = x1 - rect.x as f64 + margin_px;
            let ey1 = y1 - rect.y as f64 + margin_px;
            origins
                .iter()
                .copied()
                .filter(|&(x, y)| {
                    let (x, y) = (x as f64, y as f64);
                    x < ex1 && x + t > ex0 && y < ey1 && y + t > ey0
                })
                .collect()
        })
        .collect();
    Ok(ChunkPlan {
        zoom,
        tile_px,
        rect,
        chunks,
        windows,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ChunkProgress {
    /// 1-based.
    pub index: usize,
    pub total: usize,
    /// Detections inside the polygon after merging all chunks so far.
    pub cumulative_count: usize,
}

type WindowDets = ((f64, f64), Vec<Detection>);

/// Runs one chunk's windows, reading only the tiles under them.
fn run_chunk(
    det: &Detector,
    source: &dyn TileSource,
    plan: &ChunkPlan,
    chunk: usize,
    post: &PostprocessConfig,
    cancel: &AtomicBool,
) -> Result<Vec<WindowDets>> {
    let origins = &plan.windows[chunk];
    if origins.is_empty() {
        return Ok(Vec::new());
    }
    let t = det.tiling.tile_size;
    let (w, h) = (plan.rect.width, plan.rect.height);
    let x0 = origins.iter().map(|o| o.0).min().unwrap_or(0);
    let y0 = origins.iter().map(|o| o.1).min().unwrap_or(0);
    let x1 = origins.iter().map(|o| (o.0 + t).min(w)).max().unwrap_or(0);
    let y1 = origins.iter().map(|o| (o.1 + t).min(h)).max().unwrap_or(0);
    let sub = PixelRect {
        zoom: plan.zoom,
        x: plan.rect.x + x0 as u64,
        y: plan.rect.y + y0 as u64,
        width: x1 - x0,
        height: y1 - y0,
    };
    // Pixels past the area edge stay zero, as in the single-pass crop.
    let image: Raster = fetch_rect(source, &sub)?;
    let mut out = Vec::with_capacity(origins.len());
    for &(x, y) in origins {
        if cancel.load(Ordering::Relaxed) {
            return Err(AppError::Cancelled);
        }
        let window = image.crop_padded(x - x0, y - y0, t, t);
        let valid = ((w - x).min(t), (h - y).min(t));
        out.push((
            (x as f64, y as f64),
            detect_window(&det.model, &window, valid, post)?,
        ));
    }
    Ok(out)
}

/// Runs a chunk plan with up to `workers` chunks in flight and reports
/// progress strictly in chunk order. Returns the merged detections clipped
/// to `poly`, identical to the last progress count.
pub fn run_chunks(
    det: &Detector,
    source: &dyn TileSource,
    poly: &GeoPolygon,
    plan: &ChunkPlan,
    post: &PostprocessConfig,
    workers: usize,
    cancel: &AtomicBool,
    on_chunk: &mut dyn FnMut(ChunkProgress),
) -> Result<Clipped> {
    let total = plan.chunks.len();
    let next = AtomicUsize::new(0);
    let stop = AtomicBool::new(false);
    let (tx, rx) = mpsc::channel::<(usize, Result<Vec<WindowDets>>)>();
    let mut merged_input: Vec<WindowDets> = Vec::new();
    let mut current = Clipped {
        detections: Vec::new(),
        dropped: 0,
    };
    let outcome = std::thread::scope(|s| -> Result<()> {
        for _ in 0..workers.clamp(1, total.max(1)) {
            let tx = tx.clone();
            let (next, stop) = (&next, &stop);
            s.spawn(move || loop {
                if stop.load(Ordering::Relaxed) || cancel.load(Ordering::Relaxed) {
                    break;
                }
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= total {
                    break;
                }
                let r = run_chunk(det, source, plan, i, post, cancel);
                if tx.send((i, r)).is_err() {
                    break;
                }
            });
        }
        drop(tx);
        let mut pending = BTreeMap::new();
        let mut emitted = 0;
        for (i, r) in rx.iter() {
            pending.insert(i, r);
            while let Some(r) = pending.remove(&emitted) {
                let windows = match r {
                    Ok(w) => w,
                    Err(e) => {
                        stop.store(true, Ordering::Relaxed);
                        return Err(match e {
                            AppError::Cancelled => AppError::Cancelled,
                            other => AppError::ChunkFailed {
                                index: emitted + 1,
                                total,
                                reason: other.to_string(),
                            },
                        });
                    }
                };
                merged_input.extend(windows);
                let merged = merge_tiles(merged_input.clone(), post.iou_threshold);
                let global = merged
                    .into_iter()
                    .map(|mut d| {
                        d.bbox = d.bbox.translate(plan.rect.x as f64, plan.rect.y as f64);
                        d
                    })
                    .collect();
                current = clip_global(global, poly, plan.zoom, plan.tile_px);
                emitted += 1;
                on_chunk(ChunkProgress {
                    index: emitted,
                    total,
                    cumulative_count: current.detections.len(),
                });
            }
        }
        if cancel.load(Ordering::Relaxed) && emitted < total {
            return Err(AppError::Cancelled);
        }
        Ok(())
    });
    outcome?;
    Ok(current)
}
