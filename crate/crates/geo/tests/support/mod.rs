//! Winding-number reference for point-in-polygon and a random polygon
//! generator, shared with the acceptance run.
#![allow(dead_code)]

use canopy_geo::{GeoPoint, GeoPolygon};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Winding number of a closed ring around `p` (crossing-direction count).
pub fn winding(p: GeoPoint, ring: &[GeoPoint]) -> i32 {
    let side = |a: GeoPoint, b: GeoPoint| {
        (b.lon - a.lon) * (p.lat - a.lat) - (p.lon - a.lon) * (b.lat - a.lat)
    };
    let mut wn = 0;
    for e in ring.windows(2) {
        let (a, b) = (e[0], e[1]);
        if a.lat <= p.lat {
            if b.lat > p.lat && side(a, b) > 0.0 {
                wn += 1;
            }
        } else if b.lat <= p.lat && side(a, b) < 0.0 {
            wn -= 1;
        }
    }
    wn
}

pub fn winding_inside(p: GeoPoint, poly: &GeoPolygon) -> bool {
    winding(p, &poly.exterior) != 0 && poly.holes.iter().all(|h| winding(p, h) == 0)
}

/// Star-shaped ring around `(cx, cy)` with radii in `[r0, r1]`.
fn star(
    rng: &mut ChaCha8Rng,
    cx: f64,
    cy: f64,
    r0: f64,
    r1: f64,
    clockwise: bool,
) -> Vec<GeoPoint> {
    let n = rng.random_range(3..12);
    let mut angles: Vec<f64> = (0..n)
        .map(|_| rng.random_range(0.0..std::f64::consts::TAU))
        .collect();
    angles.sort_by(f64::total_cmp);
    angles.dedup_by(|a, b| (*a - *b).abs() < 0.05);
    if clockwise {
        angles.reverse();
    }
    let mut ring: Vec<GeoPoint> = angles
        .iter()
        .map(|t| {
            let r = rng.random_range(r0..r1);
            GeoPoint {
                lon: cx + r * t.cos(),
                lat: cy + r * t.sin(),
            }
        })
        .collect();
    ring.push(ring[0]);
    ring
}

pub fn random_polygon(rng: &mut ChaCha8Rng) -> Option<GeoPolygon> {
    let (cx, cy) = (rng.random_range(30.0..40.0), rng.random_range(28.0..34.0));
    let cw = rng.random_bool(0.5);
    let exterior = star(rng, cx, cy, 0.4, 1.0, cw);
    let holes = if rng.random_bool(0.5) {
        let cw = rng.random_bool(0.5);
        vec![star(rng, cx, cy, 0.05, 0.3, cw)]
    } else {
        vec![]
    };
    GeoPolygon::new(exterior, holes, None).ok()
}
