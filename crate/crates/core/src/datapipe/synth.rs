use std::f64::consts::TAU;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::boxes::BBox;
use crate::error::{Error, Result};

use super::raster::Raster;

/// Procedural orchard scene: textured soil with roughly round green crowns.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticSceneConfig {
    pub width: usize,
    pub height: usize,
    /// Inclusive crown count range.
    pub count: [usize; 2],
    /// Inclusive crown radius range in pixels.
    pub radius: [f64; 2],
    /// Side of the value-noise lattice cell in pixels.
    pub texture_scale: f64,
    /// Peak-to-peak soil brightness variation.
    pub texture_amplitude: f64,
    /// Allowed overlap between neighbouring crowns as a fraction of the
    /// summed radii (0 keeps crowns apart).
    pub overlap: f64,
    pub seed: u64,
}

impl Default for SyntheticSceneConfig {
    fn default() -> Self {
        SyntheticSceneConfig {
            width: 128,
            height: 128,
            count: [3, 8],
            radius: [6.0, 14.0],
            texture_scale: 16.0,
            texture_amplitude: 40.0,
            overlap: 0.0,
            seed: 0,
        }
    }
}

impl SyntheticSceneConfig {
    pub fn validate(&self) -> Result<()> {
        let [rlo, rhi] = self.radius;
        if !(rlo >= 2.0 && rlo <= rhi) {
            return Err(Error::Config(format!(
                "crown radius range [{rlo}, {rhi}] must start at >= 2 px"
            )));
        }
        if self.count[0] > self.count[1] {
            return Err(Error::Config(format!(
                "tree count range {:?} is reversed",
                self.count
            )));
        }
        if (self.width as f64) < 2.0 * rhi + 2.0 || (self.height as f64) < 2.0 * rhi + 2.0 {
            return Err(Error::Config(format!(
                "{}×{} image cannot hold a crown of radius {rhi}",
                self.width, self.height
            )));
        }
        if !(0.0..1.0).contains(&self.overlap) {
            return Err(Error::Config(format!(
                "overlap {} not in [0, 1)",
                self.overlap
            )));
        }
        if !(self.texture_scale > 0.0) {
            return Err(Error::Config("texture_scale must be positive".into()));
        }
        Ok(())
    }
}

/// A generated scene with one tight box per crown.
#[derive(Clone, Debug, PartialEq)]
pub struct Scene {
    pub image: Raster,
    pub boxes: Vec<BBox>,
    /// Centroid of each crown's painted pixels (pixel centers at `+0.5`).
    pub centroids: Vec<(f64, f64)>,
}

struct Crown {
    cx: f64,
    cy: f64,
    r: f64,
    /// Radial wobble: amplitudes and phases for two low harmonics.
    wobble: [(f64, f64); 2],
    color: [f64; 3],
}

impl Crown {
    fn radius_at(&self, theta: f64) -> f64 {
        let [(a1, p1), (a2, p2)] = self.wobble;
        self.r * (1.0 + a1 * (3.0 * theta + p1).sin() + a2 * (5.0 * theta + p2).sin())
    }
}

/// Crown placement: center and nominal radius in pixels.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CrownSpec {
    pub cx: f64,
    pub cy: f64,
    pub radius: f64,
}

/// Renders one scene with randomly placed crowns; the same config and seed
/// give identical bytes.
pub fn synth_scene(cfg: &SyntheticSceneConfig, seed: u64) -> Result<Scene> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (w, h) = (cfg.width, cfg.height);
    let target = rng.random_range(cfg.count[0]..=cfg.count[1]);
    let mut placed: Vec<CrownSpec> = Vec::with_capacity(target);
    let mut attempts = 0;
    while placed.len() < target {
        attempts += 1;
        if attempts > 10_000 {
            return Err(Error::Config(format!(
                "could not place {target} crowns in a {w}×{h} scene"
            )));
        }
        let r = rng.random_range(cfg.radius[0]..=cfg.radius[1]);
        let reach = REACH * r;
        let cx = rng.random_range(reach..=(w as f64 - reach).max(reach));
        let cy = rng.random_range(reach..=(h as f64 - reach).max(reach));
        let clear = placed.iter().all(|c| {
            let d = ((c.cx - cx).powi(2) + (c.cy - cy).powi(2)).sqrt();
            d >= (1.0 - cfg.overlap) * REACH * (c.radius + r)
        });
        if clear {
            placed.push(CrownSpec { cx, cy, radius: r });
        }
    }
    render(cfg, &placed, &mut rng)
}

/// Renders crowns at given positions over a textured background of
/// `cfg.width × cfg.height`. Crowns may extend past the image edge; their
/// boxes are the visible painted extent and crowns with no visible pixel
/// are skipped (no box, no centroid).
pub fn render_scene(cfg: &SyntheticSceneConfig, crowns: &[CrownSpec], seed: u64) -> Result<Scene> {
    if crowns.iter().any(|c| !(c.radius >= 2.0)) {
        return Err(Error::Config("crown radius must be >= 2 px".into()));
    }
    if !(cfg.texture_scale > 0.0) {
        return Err(Error::Config("texture_scale must be positive".into()));
    }
    render(cfg, crowns, &mut ChaCha8Rng::seed_from_u64(seed))
}

/// Extent of a crown relative to its nominal radius.
const REACH: f64 = 1.25;

fn render(cfg: &SyntheticSceneConfig, specs: &[CrownSpec], rng: &mut ChaCha8Rng) -> Result<Scene> {
    let (w, h) = (cfg.width, cfg.height);
    let mut img = soil(cfg, rng);
    let crowns: Vec<Crown> = specs
        .iter()
        .map(|s| {
            // Wobble amplitudes stay small enough that the shape stays
            // star-convex and within REACH × r.
            let wobble = [
                (rng.random_range(0.0..0.12), rng.random_range(0.0..TAU)),
                (rng.random_range(0.0..0.08), rng.random_range(0.0..TAU)),
            ];
            let g = rng.random_range(110.0..190.0);
            let color = [
                rng.random_range(20.0..70.0),
                g,
                rng.random_range(20.0..60.0),
            ];
            Crown {
                cx: s.cx,
                cy: s.cy,
                r: s.radius,
                wobble,
                color,
            }
        })
        .collect();

    let mut boxes = Vec::with_capacity(crowns.len());
    let mut centroids = Vec::with_capacity(crowns.len());
    for crown in &crowns {
        let reach = REACH * crown.r + 1.0;
        let x0 = (crown.cx - reach).floor().clamp(0.0, w as f64) as usize;
        let y0 = (crown.cy - reach).floor().clamp(0.0, h as f64) as usize;
        let x1 = (crown.cx + reach).ceil().clamp(0.0, w as f64) as usize;
        let y1 = (crown.cy + reach).ceil().clamp(0.0, h as f64) as usize;
        let (mut bx0, mut by0, mut bx1, mut by1) = (usize::MAX, usize::MAX, 0, 0);
        let (mut sx, mut sy, mut n) = (0.0, 0.0, 0usize);
        for y in y0..y1 {
            for x in x0..x1 {
                let dx = x as f64 + 0.5 - crown.cx;
                let dy = y as f64 + 0.5 - crown.cy;
                let d = (dx * dx + dy * dy).sqrt();
                let edge = crown.radius_at(dy.atan2(dx));
                if d > edge {
                    continue;
                }
                // Darker rim, brighter sunlit upper-left.
                let shade =
                    1.0 - 0.35 * (d / edge).powi(2) + 0.15 * (-(dx + dy) / edge).clamp(-1.0, 1.0);
                let speckle = rng.random_range(-12.0..12.0);
                let rgb = crown
                    .color
                    .map(|c| (c * shade + speckle).round().clamp(0.0, 255.0) as u8);
                img.set(x, y, rgb);
                bx0 = bx0.min(x);
                by0 = by0.min(y);
                bx1 = bx1.max(x + 1);
                by1 = by1.max(y + 1);
                sx += x as f64 + 0.5;
                sy += y as f64 + 0.5;
                n += 1;
            }
        }
        if n == 0 {
            continue;
        }
        boxes.push(BBox {
            x_min: bx0 as f64,
            y_min: by0 as f64,
            x_max: bx1 as f64,
            y_max: by1 as f64,
        });
        centroids.push((sx / n as f64, sy / n as f64));
    }
    Ok(Scene {
        image: img,
        boxes,
        centroids,
    })
}

/// Bilinear value noise over a brownish soil base.
fn soil(cfg: &SyntheticSceneConfig, rng: &mut ChaCha8Rng) -> Raster {
    let (w, h) = (cfg.width, cfg.height);
    let gw = (w as f64 / cfg.texture_scale).ceil() as usize + 2;
    let gh = (h as f64 / cfg.texture_scale).ceil() as usize + 2;
    let lattice: Vec<f64> = (0..gw * gh).map(|_| rng.random_range(-0.5..0.5)).collect();
    let base = [
        rng.random_range(120.0..160.0),
        rng.random_range(95.0..125.0),
        rng.random_range(65.0..90.0),
    ];
    let mut img = Raster::new(w, h);
    for y in 0..h {
        let fy = y as f64 / cfg.texture_scale;
        let (iy, ty) = (fy.floor() as usize, fy.fract());
        for x in 0..w {
            let fx = x as f64 / cfg.texture_scale;
            let (ix, tx) = (fx.floor() as usize, fx.fract());
            let at = |i: usize, j: usize| lattice[j * gw + i];
            let top = at(ix, iy) * (1.0 - tx) + at(ix + 1, iy) * tx;
            let bot = at(ix, iy + 1) * (1.0 - tx) + at(ix + 1, iy + 1) * tx;
            let v =
                (top * (1.0 - ty) + bot * ty) * cfg.texture_amplitude + rng.random_range(-6.0..6.0);
            img.set(x, y, base.map(|c| (c + v).round().clamp(0.0, 255.0) as u8));
        }
    }
    img
}
