//! Offline demo world: synthetic orchard tiles plus a matching cadastral
//! document, for running the service without external imagery.

use std::path::Path;

use canopy_core::datapipe::CrownSpec;
use canopy_core::BBox;
use canopy_geo::cadastral::{cadastral_feature, feature_collection};
use canopy_geo::fixture::{Orchard, OrchardSpec};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::Value;

use crate::error::{AppError, Result};

pub struct DemoWorld {
    pub orchard: Orchard,
    pub cadastral: Value,
}

#[derive(Serialize)]
pub struct WorldSummary {
    pub tiles: usize,
    pub zoom: u8,
    pub crowns: usize,
    pub bbox: [f64; 4],
    pub communities: Vec<String>,
}

/// A `tiles × tiles` orchard of jittered rows with one community split into
/// two blocks of two parcels each.
pub fn demo_world(tiles: u32, seed: u64) -> Result<DemoWorld> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let side = tiles as f64 * 256.0;
    let spacing = 48.0;
    let n = ((side - spacing) / spacing) as usize;
    let mut crowns = Vec::new();
    for r in 0..n {
        for c in 0..n {
            if rng.random_bool(0.15) {
                continue;
            }
            crowns.push(CrownSpec {
                cx: spacing * (c as f64 + 1.0) + rng.random_range(-6.0..6.0),
                cy: spacing * (r as f64 + 1.0) + rng.random_range(-6.0..6.0),
                radius: rng.random_range(7.0..12.0),
            });
        }
    }
    let orchard = Orchard::build(&OrchardSpec {
        tiles_x: tiles,
        tiles_y: tiles,
        crowns,
        seed,
        ..Default::default()
    })?;
    let px = |x0: f64, y0: f64, x1: f64, y1: f64| {
        BBox::new(x0 * side, y0 * side, x1 * side, y1 * side).expect("ordered box")
    };
    let poly = |b: BBox| orchard.polygon(&b);
    let mut features = vec![cadastral_feature(
        "community",
        "demo",
        None,
        None,
        &poly(px(0.1, 0.1, 0.9, 0.9)),
    )];
    for (bi, (y0, y1)) in [(0.1, 0.5), (0.5, 0.9)].into_iter().enumerate() {
        let block = (bi + 1).to_string();
        features.push(cadastral_feature(
            "block",
            "demo",
            Some(&block),
            None,
            &poly(px(0.1, y0, 0.9, y1)),
        ));
        for (pi, (x0, x1)) in [(0.1, 0.5), (0.5, 0.9)].into_iter().enumerate() {
            let parcel = (pi + 1).to_string();
            features.push(cadastral_feature(
                "parcel",
                "demo",
                Some(&block),
                Some(&parcel),
                &poly(px(x0, y0, x1, y1)),
            ));
        }
    }
    Ok(DemoWorld {
        orchard,
        cadastral: feature_collection(features),
    })
}

/// Writes `tiles/{z}/{x}/{y}.png` and `cadastral.geojson` under `dir`.
pub fn write_demo_world(dir: &Path, tiles: u32, seed: u64) -> Result<WorldSummary> {
    let world = demo_world(tiles, seed)?;
    world.orchard.tiles.write_dir(&dir.join("tiles"))?;
    let path = dir.join("cadastral.geojson");
    let text = serde_json::to_vec_pretty(&world.cadastral).expect("documents serialize");
    std::fs::write(&path, text).map_err(|e| AppError::store(&path, e))?;
    let g = world.orchard.geo_bbox();
    Ok(WorldSummary {
        tiles: world.orchard.tiles.addresses().count(),
        zoom: world.orchard.rect.zoom,
        crowns: world.orchard.boxes.len(),
        bbox: g.to_array(),
        communities: vec!["demo".into()],
    })
}
