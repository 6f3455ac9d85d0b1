//! Offline synthetic orchard imagery laid out on the slippy tile grid.

use canopy_core::datapipe::{render_scene, CrownSpec, Raster, SyntheticSceneConfig};
use canopy_core::BBox;
use serde::{Deserialize, Serialize};

use crate::error::{GeoError, Result};
use crate::mercator::{lonlat_to_tile, pixel_box_to_geo, GeoPoint, PixelRect};
use crate::polygon::GeoPolygon;
use crate::tiles::{MemoryTileSource, TILE_PX};

/// Orchard covering `tiles_x × tiles_y` tiles whose north-west tile holds
/// `anchor`. Crown positions are in pixels relative to the area's
/// top-left corner.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OrchardSpec {
    pub anchor: GeoPoint,
    pub zoom: u8,
    pub tiles_x: u32,
    pub tiles_y: u32,
    pub crowns: Vec<CrownSpec>,
    /// Soil texture parameters; the size fields are ignored.
    pub scene: SyntheticSceneConfig,
    pub seed: u64,
}

impl Default for OrchardSpec {
    fn default() -> Self {
        OrchardSpec {
            anchor: GeoPoint {
                lon: 35.2,
                lat: 31.9,
            },
            zoom: 18,
            tiles_x: 2,
            tiles_y: 2,
            crowns: Vec::new(),
            scene: SyntheticSceneConfig::default(),
            seed: 0,
        }
    }
}

/// Regular planting grid: `rows × cols` crowns of `radius` starting at
/// `(x0, y0)` with `spacing` pixels between centers.
pub fn planting_grid(
    rows: usize,
    cols: usize,
    x0: f64,
    y0: f64,
    spacing: f64,
    radius: f64,
) -> Vec<CrownSpec> {
    (0..rows)
        .flat_map(|r| {
            (0..cols).map(move |c| CrownSpec {
                cx: x0 + c as f64 * spacing,
                cy: y0 + r as f64 * spacing,
                radius,
            })
        })
        .collect()
}

/// Rendered orchard: the stitched area image, one box per visible crown and
/// the tiles cut from it.
#[derive(Clone, Debug)]
pub struct Orchard {
    pub rect: PixelRect,
    pub image: Raster,
    /// Crown boxes in area pixels.
    pub boxes: Vec<BBox>,
    pub tiles: MemoryTileSource,
}

impl Orchard {
    pub fn build(spec: &OrchardSpec) -> Result<Self> {
        if spec.tiles_x == 0 || spec.tiles_y == 0 {
            return Err(GeoError::InvalidViewport(
                "orchard needs at least one tile".into(),
            ));
        }
        let nw = lonlat_to_tile(spec.anchor, spec.zoom)?;
        let rect = PixelRect {
            zoom: spec.zoom,
            x: nw.x as u64 * TILE_PX as u64,
            y: nw.y as u64 * TILE_PX as u64,
            width: spec.tiles_x as usize * TILE_PX,
            height: spec.tiles_y as usize * TILE_PX,
        };
        let cfg = SyntheticSceneConfig {
            width: rect.width,
            height: rect.height,
            ..spec.scene.clone()
        };
        let scene = render_scene(&cfg, &spec.crowns, spec.seed)?;
        let tiles = MemoryTileSource::from_raster(rect, &scene.image, TILE_PX)?;
        Ok(Orchard {
            rect,
            image: scene.image,
            boxes: scene.boxes,
            tiles,
        })
    }

    /// Geographic box of an area-pixel box.
    pub fn to_geo(&self, b: &BBox) -> BBox {
        pixel_box_to_geo(
            &b.translate(self.rect.x as f64, self.rect.y as f64),
            self.rect.zoom,
            TILE_PX,
        )
    }

    /// Geographic polygon of an area-pixel rectangle.
    pub fn polygon(&self, b: &BBox) -> GeoPolygon {
        GeoPolygon::rectangle(&self.to_geo(b))
    }

    pub fn geo_bbox(&self) -> BBox {
        self.rect.to_geo(TILE_PX)
    }
}

/// Uniform water tiles over `rect` (tile-aligned).
pub fn ocean_tiles(rect: PixelRect) -> Result<MemoryTileSource> {
    let mut img = Raster::new(rect.width, rect.height);
    for y in 0..rect.height {
        for x in 0..rect.width {
            img.set(x, y, [18, 52, 96]);
        }
    }
    MemoryTileSource::from_raster(rect, &img, TILE_PX)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tiles::fetch_rect;

    #[test]
    fn orchard_tiles_stitch_back() {
        let spec = OrchardSpec {
            crowns: planting_grid(3, 3, 60.0, 60.0, 150.0, 10.0),
            ..Default::default()
        };
        let o = Orchard::build(&spec).unwrap();
        assert_eq!(o.boxes.len(), 9);
        assert_eq!(o.tiles.addresses().count(), 4);
        assert_eq!(fetch_rect(&o.tiles, &o.rect).unwrap(), o.image);
        let g = o.geo_bbox();
        assert!(g.x_min <= 35.2 && 35.2 < g.x_max && g.y_min < 31.9 && 31.9 <= g.y_max);
        let first = o.to_geo(&o.boxes[0]);
        assert!(first.x_min > g.x_min && first.y_max < g.y_max);
    }
}
