use canopy_core::objectives::{LevelGeometry, SizeRange};
use canopy_core::BBox;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Brute-force assignment: every location of every level against every box.
#[derive(Debug, PartialEq)]
pub struct Assignment {
    pub assigned: Vec<Option<usize>>,
    pub ltrb: Vec<[f64; 4]>,
    pub centerness: Vec<f64>,
    pub rejected: usize,
}

pub fn brute_force(boxes: &[BBox], levels: &[LevelGeometry], ranges: &[SizeRange]) -> Assignment {
    let mut out = Assignment {
        assigned: vec![],
        ltrb: vec![],
        centerness: vec![],
        rejected: boxes
            .iter()
            .filter(|b| !(b.x_max > b.x_min && b.y_max > b.y_min))
            .count(),
    };
    for (g, r) in levels.iter().zip(ranges) {
        let s = g.stride as f64;
        for y in 0..g.height {
            for x in 0..g.width {
                let (px, py) = (s * (x as f64 + 0.5), s * (y as f64 + 0.5));
                let mut best: Option<(usize, f64, [f64; 4])> = None;
                for (i, b) in boxes.iter().enumerate() {
                    let area = (b.x_max - b.x_min) * (b.y_max - b.y_min);
                    if area <= 0.0 {
                        continue;
                    }
                    let inside = px > b.x_min && px < b.x_max && py > b.y_min && py < b.y_max;
                    let d = [px - b.x_min, py - b.y_min, b.x_max - px, b.y_max - py];
                    let m = d[0].max(d[1]).max(d[2]).max(d[3]);
                    if !inside || !(m > r.lo && m <= r.hi) {
                        continue;
                    }
                    if best.is_none_or(|(_, a, _)| area < a) {
                        best = Some((i, area, d));
                    }
                }
                match best {
                    Some((i, _, [l, t, rr, bb])) => {
                        out.assigned.push(Some(i));
                        out.ltrb.push([l, t, rr, bb]);
                        let c = (l.min(rr) / l.max(rr)) * (t.min(bb) / t.max(bb));
                        out.centerness.push(c.sqrt());
                    }
                    None => {
                        out.assigned.push(None);
                        out.ltrb.push([0.0; 4]);
                        out.centerness.push(0.0);
                    }
                }
            }
        }
    }
    out
}

pub struct Instance {
    pub boxes: Vec<BBox>,
    pub levels: Vec<LevelGeometry>,
    pub ranges: Vec<SizeRange>,
}

/// A random pyramid with maps of at most 16×16 and up to 5 boxes.
///
/// Coordinates are sometimes snapped to a 4-pixel grid so that cell centers
/// land exactly on box edges, and boxes are sometimes duplicated to produce
/// equal-area ties.
pub fn random_instance(seed: u64) -> Instance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_levels = rng.random_range(1..=3);
    let base = [4usize, 8][rng.random_range(0..2)];
    let side = rng.random_range(1..=16usize);
    let (h, w) = (side * base, rng.random_range(1..=16usize) * base);
    let levels: Vec<LevelGeometry> = (0..n_levels)
        .map(|k| {
            let stride = base << k;
            LevelGeometry {
                stride,
                height: h.div_ceil(stride),
                width: w.div_ceil(stride),
            }
        })
        .collect();
    let mut edges = vec![0.0];
    let mut e = 0.0;
    for _ in 1..n_levels {
        e += rng.random_range(4.0..48.0f64).round();
        edges.push(e);
    }
    edges.push(f64::INFINITY);
    let ranges = edges
        .windows(2)
        .map(|p| SizeRange { lo: p[0], hi: p[1] })
        .collect();
    let snap = rng.random_bool(0.5);
    let coord = |rng: &mut ChaCha8Rng, dim: usize| {
        let v = rng.random_range(0.0..=dim as f64);
        if snap {
            (v / 4.0).round() * 4.0
        } else {
            v
        }
    };
    let mut boxes = Vec::new();
    for _ in 0..rng.random_range(0..=5) {
        if !boxes.is_empty() && rng.random_bool(0.15) {
            let dup: BBox = boxes[rng.random_range(0..boxes.len())];
            boxes.push(dup);
            continue;
        }
        let (a, b) = (coord(&mut rng, w), coord(&mut rng, w));
        let (c, d) = (coord(&mut rng, h), coord(&mut rng, h));
        let (x0, x1) = if rng.random_bool(0.05) {
            (a, a)
        } else {
            (a.min(b), a.max(b))
        };
        boxes.push(BBox {
            x_min: x0,
            y_min: c.min(d),
            x_max: x1,
            y_max: c.max(d),
        });
    }
    Instance {
        boxes,
        levels,
        ranges,
    }
}
