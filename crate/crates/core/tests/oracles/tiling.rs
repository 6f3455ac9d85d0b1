//! Tiling invariants checked against first-principles arithmetic.

use canopy_core::datapipe::{tile_image, Raster, TileSpec};
use canopy_core::postprocess::{merge_tiles, Detection};
use canopy_core::BBox;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub struct Config {
    pub image: Raster,
    pub boxes: Vec<BBox>,
    pub spec: TileSpec,
}

/// A random image with pairwise-disjoint boxes laid out on a coarse grid.
pub fn random_config(seed: u64) -> Config {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let tile = rng.random_range(16..=96);
    let spec = TileSpec {
        tile_size: tile,
        overlap: rng.random_range(0..tile),
        min_box_visibility: rng.random_range(0.05..=1.0),
    };
    let (w, h) = (rng.random_range(1..=300), rng.random_range(1..=300));
    let mut image = Raster::new(w, h);
    for y in 0..h {
        for x in 0..w {
            image.set(x, y, [(x % 251) as u8, (y % 251) as u8, rng.random()]);
        }
    }
    // One box per 24-pixel cell, never touching its neighbours.
    let mut boxes = vec![];
    for cy in 0..h.div_ceil(24) {
        for cx in 0..w.div_ceil(24) {
            if !rng.random_bool(0.4) {
                continue;
            }
            let (x0, y0) = ((cx * 24) as f64, (cy * 24) as f64);
            let (a, b) = (rng.random_range(1.0..10.0), rng.random_range(1.0..10.0));
            let bx = BBox {
                x_min: x0 + a,
                y_min: y0 + b,
                x_max: (x0 + a + rng.random_range(2.0..12.0)).min(w as f64),
                y_max: (y0 + b + rng.random_range(2.0..12.0)).min(h as f64),
            };
            if bx.x_max > bx.x_min && bx.y_max > bx.y_min {
                boxes.push(bx);
            }
        }
    }
    Config { image, boxes, spec }
}

/// Checks coverage, pixel content, box clipping, round trip and
/// duplicate merging for one configuration.
pub fn check(c: &Config) -> Result<(), String> {
    let tiles = tile_image(&c.image, &c.boxes, &c.spec).map_err(|e| e.to_string())?;
    let t = c.spec.tile_size;
    let (w, h) = (c.image.width(), c.image.height());

    // Every pixel lies in some tile; no tile starts outside the image or
    // reaches past it unless the image is smaller than a tile.
    let mut covered = vec![false; w * h];
    for tile in &tiles {
        let (ox, oy) = tile.origin;
        if ox >= w.max(1) || oy >= h.max(1) {
            return Err(format!("tile origin {:?} outside {w}x{h}", tile.origin));
        }
        if (w >= t && ox + t > w) || (h >= t && oy + t > h) {
            return Err(format!("tile at {:?} overruns {w}x{h}", tile.origin));
        }
        if (tile.image.width(), tile.image.height()) != (t, t) {
            return Err("tile has wrong size".into());
        }
        for y in 0..t {
            for x in 0..t {
                let (gx, gy) = (ox + x, oy + y);
                let expect = if gx < w && gy < h {
                    covered[gy * w + gx] = true;
                    c.image.get(gx, gy)
                } else {
                    [0, 0, 0]
                };
                if tile.image.get(x, y) != expect {
                    return Err(format!("pixel ({x},{y}) of tile {:?}", tile.origin));
                }
            }
        }
    }
    if let Some(i) = covered.iter().position(|v| !v) {
        return Err(format!("pixel ({}, {}) not covered", i % w, i / w));
    }

    let mut expected_merge: Vec<BBox> = vec![];
    let mut per_tile = vec![];
    for tile in &tiles {
        let (ox, oy) = (tile.origin.0 as f64, tile.origin.1 as f64);
        let (x1, y1) = (ox + t as f64, oy + t as f64);
        let mut expect = vec![];
        let mut dets = vec![];
        for b in &c.boxes {
            let iw = b.x_max.min(x1) - b.x_min.max(ox);
            let ih = b.y_max.min(y1) - b.y_min.max(oy);
            if iw < 0.0 || ih < 0.0 {
                continue;
            }
            let area = (b.x_max - b.x_min) * (b.y_max - b.y_min);
            if iw * ih / area < c.spec.min_box_visibility {
                continue;
            }
            let local = BBox {
                x_min: b.x_min.max(ox) - ox,
                y_min: b.y_min.max(oy) - oy,
                x_max: b.x_max.min(x1) - ox,
                y_max: b.y_max.min(y1) - oy,
            };
            expect.push(local);
            // Round trip: back in the global frame the kept box is the part
            // of the original inside the tile.
            let g = local.translate(ox, oy);
            let inside = b.intersection(&g).ok_or("kept box left its source")?;
            if (0..4).any(|k| (inside.to_array()[k] - g.to_array()[k]).abs() > 1e-9) {
                return Err(format!(
                    "round trip of {b:?} through tile {:?}",
                    tile.origin
                ));
            }
            if iw * ih == area {
                dets.push(Detection::pixel(local, 0.9, 1.0, 8));
                if !expected_merge.contains(b) {
                    expected_merge.push(*b);
                }
            }
        }
        if tile.boxes != expect {
            return Err(format!(
                "tile {:?}: boxes {:?}, expected {expect:?}",
                tile.origin, tile.boxes
            ));
        }
        per_tile.push(((ox, oy), dets));
    }

    // Fully visible boxes seen by several tiles merge back to one each.
    let mut merged: Vec<BBox> = merge_tiles(per_tile, 0.5)
        .into_iter()
        .map(|d| d.bbox)
        .collect();
    let key = |b: &BBox| (b.y_min, b.x_min);
    merged.sort_by(|a, b| key(a).partial_cmp(&key(b)).unwrap());
    expected_merge.sort_by(|a, b| key(a).partial_cmp(&key(b)).unwrap());
    if merged.len() != expected_merge.len() {
        return Err(format!(
            "merge kept {} of {}",
            merged.len(),
            expected_merge.len()
        ));
    }
    for (m, e) in merged.iter().zip(&expected_merge) {
        if (0..4).any(|k| (m.to_array()[k] - e.to_array()[k]).abs() > 1e-9) {
            return Err(format!("merged {m:?} vs {e:?}"));
        }
    }
    Ok(())
}
