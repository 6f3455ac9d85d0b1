use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::boxes::BBox;
use crate::error::{Error, Result};

use super::raster::Raster;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentationConfig {
    pub hflip_prob: f64,
    pub vflip_prob: f64,
    /// Rotate by a uniformly drawn multiple of 90°.
    pub rot90: bool,
    pub jitter_prob: f64,
    /// Additive brightness delta range, as a fraction of full scale.
    pub brightness: f64,
    /// Contrast factor range `1 ± contrast`.
    pub contrast: f64,
    /// Saturation factor range `1 ± saturation`.
    pub saturation: f64,
    pub blur_prob: f64,
    /// Odd box-blur kernel sizes, inclusive range.
    pub blur_kernel: [usize; 2],
    /// Base seed; callers mix in a per-sample value.
    pub seed: u64,
}

impl Default for AugmentationConfig {
    fn default() -> Self {
        AugmentationConfig {
            hflip_prob: 0.5,
            vflip_prob: 0.5,
            rot90: true,
            jitter_prob: 0.5,
            brightness: 0.1,
            contrast: 0.1,
            saturation: 0.1,
            blur_prob: 0.1,
            blur_kernel: [3, 5],
            seed: 0,
        }
    }
}

impl AugmentationConfig {
    /// Every augmentation off.
    pub fn none() -> Self {
        AugmentationConfig {
            hflip_prob: 0.0,
            vflip_prob: 0.0,
            rot90: false,
            jitter_prob: 0.0,
            blur_prob: 0.0,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        for p in [
            self.hflip_prob,
            self.vflip_prob,
            self.jitter_prob,
            self.blur_prob,
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Config(format!("probability {p} not in [0, 1]")));
            }
        }
        let [lo, hi] = self.blur_kernel;
        if lo == 0 || lo > hi || lo % 2 == 0 || hi % 2 == 0 {
            return Err(Error::Config(format!(
                "blur kernel range {lo}..={hi} must be odd and ordered"
            )));
        }
        Ok(())
    }
}

pub fn hflip(img: &Raster, boxes: &[BBox]) -> (Raster, Vec<BBox>) {
    let (w, h) = (img.width(), img.height());
    let mut out = Raster::new(w, h);
    for y in 0..h {
        for x in 0..w {
            out.set(w - 1 - x, y, img.get(x, y));
        }
    }
    let wf = w as f64;
    let b = boxes
        .iter()
        .map(|b| BBox {
            x_min: wf - b.x_max,
            x_max: wf - b.x_min,
            ..*b
        })
        .collect();
    (out, b)
}

pub fn vflip(img: &Raster, boxes: &[BBox]) -> (Raster, Vec<BBox>) {
    let (w, h) = (img.width(), img.height());
    let mut out = Raster::new(w, h);
    for y in 0..h {
        for x in 0..w {
            out.set(x, h - 1 - y, img.get(x, y));
        }
    }
    let hf = h as f64;
    let b = boxes
        .iter()
        .map(|b| BBox {
            y_min: hf - b.y_max,
            y_max: hf - b.y_min,
            ..*b
        })
        .collect();
    (out, b)
}

/// Rotates clockwise by `quarter_turns × 90°`.
pub fn rotate90(img: &Raster, boxes: &[BBox], quarter_turns: usize) -> (Raster, Vec<BBox>) {
    let mut img = img.clone();
    let mut boxes = boxes.to_vec();
    for _ in 0..quarter_turns % 4 {
        let (w, h) = (img.width(), img.height());
        let mut out = Raster::new(h, w);
        // Clockwise: (x, y) -> (h - 1 - y, x).
        for y in 0..h {
            for x in 0..w {
                out.set(h - 1 - y, x, img.get(x, y));
            }
        }
        let hf = h as f64;
        boxes = boxes
            .iter()
            .map(|b| BBox {
                x_min: hf - b.y_max,
                y_min: b.x_min,
                x_max: hf - b.y_min,
                y_max: b.x_max,
            })
            .collect();
        img = out;
    }
    (img, boxes)
}

/// Brightness shift, contrast and saturation scaling.
pub fn color_jitter(img: &Raster, brightness: f64, contrast: f64, saturation: f64) -> Raster {
    let n = img.width() * img.height();
    let mean: f64 = img
        .data()
        .chunks(3)
        .map(|p| gray(p[0], p[1], p[2]))
        .sum::<f64>()
        / n.max(1) as f64;
    let data = img
        .data()
        .chunks(3)
        .flat_map(|p| {
            let g = gray(p[0], p[1], p[2]);
            let f = |c: u8| {
                let v = c as f64 + brightness * 255.0;
                let v = mean + (v - mean) * contrast;
                let gv = g + brightness * 255.0;
                let gv = mean + (gv - mean) * contrast;
                let v = gv + (v - gv) * saturation;
                v.round().clamp(0.0, 255.0) as u8
            };
            [f(p[0]), f(p[1]), f(p[2])]
        })
        .collect();
    Raster::from_rgb(img.width(), img.height(), data).expect("same size")
}

fn gray(r: u8, g: u8, b: u8) -> f64 {
    0.299 * r as f64 + 0.587 * g as f64 + 0.114 * b as f64
}

/// Separable `k × k` mean filter with edge clamping.
pub fn box_blur(img: &Raster, k: usize) -> Raster {
    let (w, h) = (img.width(), img.height());
    let r = (k / 2) as isize;
    let pass = |src: &Raster, horizontal: bool| {
        let mut out = Raster::new(w, h);
        for y in 0..h {
            for x in 0..w {
                let mut acc = [0u32; 3];
                for d in -r..=r {
                    let (sx, sy) = if horizontal {
                        ((x as isize + d).clamp(0, w as isize - 1) as usize, y)
                    } else {
                        (x, (y as isize + d).clamp(0, h as isize - 1) as usize)
                    };
                    let p = src.get(sx, sy);
                    for c in 0..3 {
                        acc[c] += p[c] as u32;
                    }
                }
                let kk = (2 * r + 1) as u32;
                out.set(x, y, acc.map(|a| ((a + kk / 2) / kk) as u8));
            }
        }
        out
    };
    if w == 0 || h == 0 {
        return img.clone();
    }
    pass(&pass(img, true), false)
}

/// Applies the configured random augmentations; identical seeds give
/// identical results.
pub fn augment(
    img: &Raster,
    boxes: &[BBox],
    cfg: &AugmentationConfig,
    seed: u64,
) -> Result<(Raster, Vec<BBox>)> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut img = img.clone();
    let mut boxes = boxes.to_vec();
    if rng.random::<f64>() < cfg.hflip_prob {
        (img, boxes) = hflip(&img, &boxes);
    }
    if rng.random::<f64>() < cfg.vflip_prob {
        (img, boxes) = vflip(&img, &boxes);
    }
    if cfg.rot90 {
        let mut k = rng.random_range(0..4);
        // A quarter turn would change the shape of a non-square image.
        if img.width() != img.height() {
            k &= !1;
        }
        (img, boxes) = rotate90(&img, &boxes, k);
    }
    if rng.random::<f64>() < cfg.jitter_prob {
        let b = rng.random_range(-1.0..=1.0) * cfg.brightness;
        let c = 1.0 + rng.random_range(-1.0..=1.0) * cfg.contrast;
        let s = 1.0 + rng.random_range(-1.0..=1.0) * cfg.saturation;
        img = color_jitter(&img, b, c, s);
    }
    if rng.random::<f64>() < cfg.blur_prob {
        let [lo, hi] = cfg.blur_kernel;
        let k = lo + 2 * rng.random_range(0..=(hi - lo) / 2);
        img = box_blur(&img, k);
    }
    Ok((img, boxes))
}
