//! Spherical Web-Mercator ("slippy map") tile and pixel math.

use std::f64::consts::PI;
use std::fmt;

use canopy_core::BBox;
use serde::{Deserialize, Serialize};

use crate::error::{GeoError, Result};

/// Latitude limit of the square Web-Mercator world.
pub const MAX_LATITUDE: f64 = 85.051_128_779_806_59;

/// Mean Earth radius used for ground distances, in meters.
pub const EARTH_RADIUS_M: f64 = 6_371_008.8;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeoPoint {
    pub lon: f64,
    pub lat: f64,
}

impl GeoPoint {
    /// Checked constructor: longitude in [−180, 180], latitude strictly
    /// inside the Web-Mercator band.
    pub fn new(lon: f64, lat: f64) -> Result<Self> {
        if !(-180.0..=180.0).contains(&lon) {
            return Err(GeoError::InvalidPoint(format!(
                "longitude {lon} outside [-180, 180]"
            )));
        }
        if !(lat.abs() < MAX_LATITUDE) {
            return Err(GeoError::InvalidPoint(format!(
                "latitude {lat} outside the Web-Mercator band ±{MAX_LATITUDE}"
            )));
        }
        Ok(GeoPoint { lon, lat })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct TileAddress {
    pub z: u8,
    pub x: u32,
    pub y: u32,
}

impl fmt::Display for TileAddress {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}/{}", self.z, self.x, self.y)
    }
}

impl TileAddress {
    pub fn new(z: u8, x: u32, y: u32) -> Result<Self> {
        if z > 30 || u64::from(x) >= 1 << z || u64::from(y) >= 1 << z {
            return Err(GeoError::InvalidPoint(format!(
                "tile {z}/{x}/{y} out of range"
            )));
        }
        Ok(TileAddress { z, x, y })
    }
}

/// Fractional tile coordinates of a point at zoom `z`.
fn tile_coords(p: GeoPoint, z: u8) -> (f64, f64) {
    let n = f64::from(1u32 << z);
    let x = (p.lon + 180.0) / 360.0 * n;
    let y = (1.0 - p.lat.to_radians().tan().asinh() / PI) / 2.0 * n;
    (x, y)
}

/// Tile containing `p` at zoom `z`; the east edge (lon 180) folds into the
/// last column. Coordinates within 1e-9 tile of a grid line snap to it, so
/// tile corners map back to their own tile despite rounding.
pub fn lonlat_to_tile(p: GeoPoint, z: u8) -> Result<TileAddress> {
    let p = GeoPoint::new(p.lon, p.lat)?;
    let max = (1u64 << z) - 1;
    let (x, y) = tile_coords(p, z);
    let snap = |v: f64| {
        if (v - v.round()).abs() < 1e-9 {
            v.round()
        } else {
            v
        }
    };
    let clamp = |v: f64| (snap(v).floor().max(0.0) as u64).min(max) as u32;
    Ok(TileAddress {
        z,
        x: clamp(x),
        y: clamp(y),
    })
}

/// North-west corner of a tile.
pub fn tile_to_lonlat(t: TileAddress) -> GeoPoint {
    let n = f64::from(1u32 << t.z);
    let lon = f64::from(t.x) / n * 360.0 - 180.0;
    let lat = (PI * (1.0 - 2.0 * f64::from(t.y) / n))
        .sinh()
        .atan()
        .to_degrees();
    GeoPoint { lon, lat }
}

/// Global pixel position of `p` at zoom `z` with `tile_px`-pixel tiles.
pub fn lonlat_to_pixel(p: GeoPoint, z: u8, tile_px: usize) -> (f64, f64) {
    let (x, y) = tile_coords(p, z);
    (x * tile_px as f64, y * tile_px as f64)
}

/// Inverse of [`lonlat_to_pixel`].
pub fn pixel_to_lonlat(x: f64, y: f64, z: u8, tile_px: usize) -> GeoPoint {
    let n = f64::from(1u32 << z) * tile_px as f64;
    let lon = x / n * 360.0 - 180.0;
    let lat = (PI * (1.0 - 2.0 * y / n)).sinh().atan().to_degrees();
    GeoPoint { lon, lat }
}

/// Converts a global pixel box to `[min_lon, min_lat, max_lon, max_lat]`.
pub fn pixel_box_to_geo(b: &BBox, z: u8, tile_px: usize) -> BBox {
    let nw = pixel_to_lonlat(b.x_min, b.y_min, z, tile_px);
    let se = pixel_to_lonlat(b.x_max, b.y_max, z, tile_px);
    BBox {
        x_min: nw.lon,
        y_min: se.lat,
        x_max: se.lon,
        y_max: nw.lat,
    }
}

/// Great-circle distance in meters.
pub fn ground_distance_m(a: GeoPoint, b: GeoPoint) -> f64 {
    let (p1, p2) = (a.lat.to_radians(), b.lat.to_radians());
    let dp = p2 - p1;
    let dl = (b.lon - a.lon).to_radians();
    let h = (dp / 2.0).sin().powi(2) + p1.cos() * p2.cos() * (dl / 2.0).sin().powi(2);
    2.0 * EARTH_RADIUS_M * h.sqrt().min(1.0).asin()
}

/// Geographic bounding box plus a zoom level.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Viewport {
    pub min_lon: f64,
    pub min_lat: f64,
    pub max_lon: f64,
    pub max_lat: f64,
    pub zoom: u8,
}

impl Viewport {
    pub fn validate(&self) -> Result<()> {
        if !(self.min_lon < self.max_lon && self.min_lat < self.max_lat) {
            return Err(GeoError::InvalidViewport(format!(
                "need min < max per axis, got lon [{}, {}], lat [{}, {}]",
                self.min_lon, self.max_lon, self.min_lat, self.max_lat
            )));
        }
        GeoPoint::new(self.min_lon, self.min_lat)?;
        GeoPoint::new(self.max_lon, self.max_lat)?;
        if self.zoom > 24 {
            return Err(GeoError::InvalidViewport(format!(
                "zoom {} above 24",
                self.zoom
            )));
        }
        Ok(())
    }

    pub fn from_bbox(b: &BBox, zoom: u8) -> Self {
        Viewport {
            min_lon: b.x_min,
            min_lat: b.y_min,
            max_lon: b.x_max,
            max_lat: b.y_max,
            zoom,
        }
    }

    pub fn bbox(&self) -> BBox {
        BBox {
            x_min: self.min_lon,
            y_min: self.min_lat,
            x_max: self.max_lon,
            y_max: self.max_lat,
        }
    }

    /// Covering global pixel window (whole pixels, outward-rounded).
    pub fn pixel_rect(&self, tile_px: usize) -> PixelRect {
        PixelRect::covering(&self.bbox(), self.zoom, tile_px)
    }
}

/// Tiles covering the viewport: inclusive index ranges between the corner
/// tiles, in row-major order (north to south, west to east).
pub fn viewport_tiles(v: &Viewport) -> Result<Vec<TileAddress>> {
    v.validate()?;
    let nw = lonlat_to_tile(GeoPoint::new(v.min_lon, v.max_lat)?, v.zoom)?;
    let se = lonlat_to_tile(GeoPoint::new(v.max_lon, v.min_lat)?, v.zoom)?;
    Ok((nw.y..=se.y)
        .flat_map(|y| (nw.x..=se.x).map(move |x| TileAddress { z: v.zoom, x, y }))
        .collect())
}

/// Axis-aligned window in global pixel coordinates at one zoom.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PixelRect {
    pub zoom: u8,
    pub x: u64,
    pub y: u64,
    pub width: usize,
    pub height: usize,
}

impl PixelRect {
    /// Smallest whole-pixel window containing a geographic box.
    pub fn covering(b: &BBox, zoom: u8, tile_px: usize) -> Self {
        let (x0, y0) = lonlat_to_pixel(
            GeoPoint {
                lon: b.x_min,
                lat: b.y_max,
            },
            zoom,
            tile_px,
        );
        let (x1, y1) = lonlat_to_pixel(
            GeoPoint {
                lon: b.x_max,
                lat: b.y_min,
            },
            zoom,
            tile_px,
        );
        let (x0, y0) = (x0.floor().max(0.0) as u64, y0.floor().max(0.0) as u64);
        let (x1, y1) = (x1.ceil() as u64, y1.ceil() as u64);
        PixelRect {
            zoom,
            x: x0,
            y: y0,
            width: x1.saturating_sub(x0).max(1) as usize,
            height: y1.saturating_sub(y0).max(1) as usize,
        }
    }

    pub fn to_bbox(&self) -> BBox {
        BBox {
            x_min: self.x as f64,
            y_min: self.y as f64,
            x_max: (self.x + self.width as u64) as f64,
            y_max: (self.y + self.height as u64) as f64,
        }
    }

    pub fn to_geo(&self, tile_px: usize) -> BBox {
        pixel_box_to_geo(&self.to_bbox(), self.zoom, tile_px)
    }

    /// Tiles overlapping the window, row-major.
    pub fn tiles(&self, tile_px: usize) -> Vec<TileAddress> {
        let t = tile_px as u64;
        let max = (1u64 << self.zoom) - 1;
        let (tx0, ty0) = ((self.x / t).min(max), (self.y / t).min(max));
        let tx1 = ((self.x + self.width as u64 - 1) / t).min(max);
        let ty1 = ((self.y + self.height as u64 - 1) / t).min(max);
        (ty0..=ty1)
            .flat_map(|y| {
                (tx0..=tx1).map(move |x| TileAddress {
                    z: self.zoom,
                    x: x as u32,
                    y: y as u32,
                })
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pt(lon: f64, lat: f64) -> GeoPoint {
        GeoPoint::new(lon, lat).unwrap()
    }

    #[test]
    fn tile_examples() {
        assert_eq!(
            lonlat_to_tile(pt(0.0, 0.0), 1).unwrap(),
            TileAddress { z: 1, x: 1, y: 1 }
        );
        assert_eq!(
            lonlat_to_tile(pt(-180.0, 0.0), 0).unwrap(),
            TileAddress { z: 0, x: 0, y: 0 }
        );
        assert!(lonlat_to_tile(
            GeoPoint {
                lon: 0.0,
                lat: 86.0
            },
            3
        )
        .is_err());
        assert!(GeoPoint::new(181.0, 0.0).is_err());
    }

    #[test]
    fn round_trip_exhaustive_low_zoom() {
        for z in 0..=4u8 {
            for x in 0..1u32 << z {
                for y in 0..1u32 << z {
                    let t = TileAddress { z, x, y };
                    let nw = tile_to_lonlat(t);
                    // The NW corner of the top row sits on the band edge.
                    let nw = GeoPoint {
                        lon: nw.lon,
                        lat: nw.lat.min(MAX_LATITUDE - 1e-9),
                    };
                    assert_eq!(lonlat_to_tile(nw, z).unwrap(), t);
                }
            }
        }
    }

    #[test]
    fn viewport_examples() {
        let one = Viewport {
            min_lon: 10.0,
            min_lat: 10.0,
            max_lon: 11.0,
            max_lat: 11.0,
            zoom: 3,
        };
        assert_eq!(viewport_tiles(&one).unwrap().len(), 1);
        let corner = Viewport {
            min_lon: -1.0,
            min_lat: -1.0,
            max_lon: 1.0,
            max_lat: 1.0,
            zoom: 1,
        };
        let tiles = viewport_tiles(&corner).unwrap();
        let xy: Vec<(u32, u32)> = tiles.iter().map(|t| (t.x, t.y)).collect();
        assert_eq!(xy, vec![(0, 0), (1, 0), (0, 1), (1, 1)]);
        let world = Viewport {
            min_lon: -180.0,
            min_lat: -85.0,
            max_lon: 180.0,
            max_lat: 85.0,
            zoom: 2,
        };
        assert_eq!(viewport_tiles(&world).unwrap().len(), 16);
        let bad = Viewport {
            max_lon: -2.0,
            ..corner
        };
        assert!(viewport_tiles(&bad).is_err());
    }

    #[test]
    fn pixel_round_trip() {
        let p = pt(35.2, 31.9);
        let (x, y) = lonlat_to_pixel(p, 17, 256);
        let q = pixel_to_lonlat(x, y, 17, 256);
        assert!((p.lon - q.lon).abs() < 1e-10 && (p.lat - q.lat).abs() < 1e-10);
    }

    #[test]
    fn pixel_rect_tiles() {
        let r = PixelRect {
            zoom: 4,
            x: 250,
            y: 0,
            width: 300,
            height: 256,
        };
        let t: Vec<(u32, u32)> = r.tiles(256).iter().map(|t| (t.x, t.y)).collect();
        assert_eq!(t, vec![(0, 0), (1, 0), (2, 0)]);
    }

    #[test]
    fn ground_distance() {
        // One degree of latitude is ~111.2 km.
        let d = ground_distance_m(pt(35.0, 31.0), pt(35.0, 32.0));
        assert!((d - 111_195.0).abs() < 10.0, "{d}");
    }
}
