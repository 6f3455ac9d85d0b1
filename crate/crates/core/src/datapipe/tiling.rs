use serde::{Deserialize, Serialize};

use crate::boxes::BBox;
use crate::error::{Error, Result};

use super::raster::Raster;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TileSpec {
    pub tile_size: usize,
    pub overlap: usize,
    /// Minimum fraction of a box's area that must fall inside a tile.
    pub min_box_visibility: f64,
}

impl Default for TileSpec {
    fn default() -> Self {
        TileSpec {
            tile_size: 640,
            overlap: 128,
            min_box_visibility: 0.3,
        }
    }
}

impl TileSpec {
    pub fn validate(&self) -> Result<()> {
        if self.tile_size == 0 || self.overlap >= self.tile_size {
            return Err(Error::Config(format!(
                "need 0 <= overlap < tile_size, got {} / {}",
                self.overlap, self.tile_size
            )));
        }
        if !(self.min_box_visibility > 0.0 && self.min_box_visibility <= 1.0) {
            return Err(Error::Config(format!(
                "min_box_visibility {} not in (0, 1]",
                self.min_box_visibility
            )));
        }
        Ok(())
    }

    pub fn stride(&self) -> usize {
        self.tile_size - self.overlap
    }
}

/// Tile origins along one axis of length `dim`.
///
/// Steps by `tile_size − overlap`; the last origin is pulled back to
/// `dim − tile_size` so no tile extends past the image unless the image is
/// smaller than a tile.
pub fn tile_offsets(dim: usize, spec: &TileSpec) -> Vec<usize> {
    let t = spec.tile_size;
    let mut offs = vec![0];
    while let Some(&last) = offs.last() {
        if last + t >= dim {
            break;
        }
        let next = (last + spec.stride()).min(dim - t);
        offs.push(next);
    }
    offs
}

#[derive(Clone, Debug, PartialEq)]
pub struct Tile {
    /// Top-left corner in the source image.
    pub origin: (usize, usize),
    pub image: Raster,
    /// Boxes clipped to the tile, in tile coordinates.
    pub boxes: Vec<BBox>,
}

/// Box clipping rule shared by image tiling and tests: keep when at least
/// `min_visibility` of the box area lies in `window`, clipped and translated
/// into the window frame.
pub fn clip_box_to_window(b: &BBox, window: &BBox, min_visibility: f64) -> Option<BBox> {
    if b.is_degenerate() {
        return None;
    }
    let inter = b.intersection(window)?;
    (inter.area() / b.area() >= min_visibility)
        .then(|| inter.translate(-window.x_min, -window.y_min))
}

/// Splits an image into `tile_size` squares (zero-padded at the bottom/right
/// when the image is smaller than a tile) with their visible boxes.
pub fn tile_image(image: &Raster, boxes: &[BBox], spec: &TileSpec) -> Result<Vec<Tile>> {
    spec.validate()?;
    let t = spec.tile_size;
    let mut tiles = Vec::new();
    for &y in &tile_offsets(image.height(), spec) {
        for &x in &tile_offsets(image.width(), spec) {
            let window = BBox {
                x_min: x as f64,
                y_min: y as f64,
                x_max: (x + t) as f64,
                y_max: (y + t) as f64,
            };
            tiles.push(Tile {
                origin: (x, y),
                image: image.crop_padded(x, y, t, t),
                boxes: boxes
                    .iter()
                    .filter_map(|b| clip_box_to_window(b, &window, spec.min_box_visibility))
                    .collect(),
            });
        }
    }
    Ok(tiles)
}
