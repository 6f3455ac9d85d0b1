use canopy_core::postprocess::Detection;
use canopy_core::BBox;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Debug)]
pub struct Reference {
    pub ap: [Option<f64>; 10],
    pub precision: f64,
    pub recall: f64,
}

fn iou(a: &BBox, b: &BBox) -> f64 {
    let w = (a.x_max.min(b.x_max) - a.x_min.max(b.x_min)).max(0.0);
    let h = (a.y_max.min(b.y_max) - a.y_min.max(b.y_min)).max(0.0);
    let inter = w * h;
    let union = (a.x_max - a.x_min) * (a.y_max - a.y_min)
        + (b.x_max - b.x_min) * (b.y_max - b.y_min)
        - inter;
    if union > 0.0 {
        inter / union
    } else {
        0.0
    }
}

/// 101-point AP straight from the definition: for each recall level, the
/// best precision among curve points reaching it.
pub fn ap_101(flags: &[bool], n_gt: usize) -> Option<f64> {
    if n_gt == 0 {
        return None;
    }
    let mut points = vec![];
    let mut tp = 0;
    for (i, f) in flags.iter().enumerate() {
        if *f {
            tp += 1;
        }
        points.push((tp as f64 / n_gt as f64, tp as f64 / (i + 1) as f64));
    }
    let mut sum = 0.0;
    for k in 0..=100 {
        let r = k as f64 / 100.0;
        let best = points
            .iter()
            .filter(|(rec, _)| *rec >= r)
            .map(|(_, p)| *p)
            .fold(0.0, f64::max);
        sum += best;
    }
    Some(sum / 101.0)
}

/// Re-sorts, re-matches and re-pools from scratch.
pub fn evaluate(dets: &[Vec<Detection>], gts: &[Vec<BBox>], cutoff: f64) -> Reference {
    let n_gt: usize = gts.iter().map(Vec::len).sum();
    let mut ap = [None; 10];
    let (mut precision, mut recall) = (1.0, 1.0);
    for (t, slot) in ap.iter_mut().enumerate() {
        let thr = (50 + 5 * t) as f64 / 100.0;
        // (score, image, rank within image, tp)
        let mut pooled: Vec<(f64, usize, usize, bool)> = vec![];
        for (img, (d, g)) in dets.iter().zip(gts).enumerate() {
            let mut order: Vec<usize> = (0..d.len()).collect();
            order.sort_by(|&a, &b| {
                let (a, b) = (&d[a], &d[b]);
                b.score
                    .partial_cmp(&a.score)
                    .unwrap()
                    .then(a.bbox.x_min.partial_cmp(&b.bbox.x_min).unwrap())
                    .then(a.bbox.y_min.partial_cmp(&b.bbox.y_min).unwrap())
            });
            let mut taken = vec![false; g.len()];
            for (rank, &i) in order.iter().enumerate() {
                let mut best = None;
                let mut best_iou = thr;
                for (j, gt) in g.iter().enumerate() {
                    let v = iou(&d[i].bbox, gt);
                    if !taken[j] && v >= best_iou && (best.is_none() || v > best_iou) {
                        best = Some(j);
                        best_iou = v;
                    }
                }
                if let Some(j) = best {
                    taken[j] = true;
                }
                pooled.push((d[i].score, img, rank, best.is_some()));
            }
        }
        if t == 0 {
            let kept: Vec<bool> = pooled
                .iter()
                .filter(|p| p.0 >= cutoff)
                .map(|p| p.3)
                .collect();
            let tp = kept.iter().filter(|f| **f).count();
            if !kept.is_empty() {
                precision = tp as f64 / kept.len() as f64;
            }
            if n_gt > 0 {
                recall = tp as f64 / n_gt as f64;
            }
        }
        pooled.sort_by(|a, b| {
            b.0.partial_cmp(&a.0)
                .unwrap()
                .then(a.1.cmp(&b.1))
                .then(a.2.cmp(&b.2))
        });
        let flags: Vec<bool> = pooled.iter().map(|p| p.3).collect();
        *slot = ap_101(&flags, n_gt);
    }
    Reference {
        ap,
        precision,
        recall,
    }
}

pub struct MicroDataset {
    pub dets: Vec<Vec<Detection>>,
    pub gts: Vec<Vec<BBox>>,
}

/// Up to 4 images with up to 6 ground-truth boxes each; detections are
/// jittered copies (some duplicated) plus strays, with coarse scores so
/// that ties occur.
pub fn random_micro_dataset(seed: u64) -> MicroDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_img = rng.random_range(1..=4);
    let coarse = rng.random_bool(0.5);
    let score = |rng: &mut ChaCha8Rng| {
        let s: f64 = rng.random_range(0.01..1.0);
        if coarse {
            (s * 5.0).ceil() / 5.0
        } else {
            s
        }
    };
    let random_box = |rng: &mut ChaCha8Rng| {
        let (x, y) = (rng.random_range(0.0..100.0), rng.random_range(0.0..100.0));
        let (w, h) = (rng.random_range(4.0..30.0), rng.random_range(4.0..30.0));
        BBox {
            x_min: x,
            y_min: y,
            x_max: x + w,
            y_max: y + h,
        }
    };
    let mut dets = vec![];
    let mut gts = vec![];
    for _ in 0..n_img {
        let g: Vec<BBox> = (0..rng.random_range(0..=6))
            .map(|_| random_box(&mut rng))
            .collect();
        let mut d = vec![];
        for b in &g {
            for _ in 0..rng.random_range(0..=2) {
                let j = rng.random_range(0.0..0.25) * (b.x_max - b.x_min);
                let k = rng.random_range(0.0..0.25) * (b.y_max - b.y_min);
                let bb = BBox {
                    x_min: b.x_min + rng.random_range(-j..=j),
                    y_min: b.y_min + rng.random_range(-k..=k),
                    x_max: b.x_max + rng.random_range(-j..=j),
                    y_max: b.y_max + rng.random_range(-k..=k),
                };
                d.push(Detection::pixel(bb, score(&mut rng), 1.0, 8));
            }
        }
        for _ in 0..rng.random_range(0..=3) {
            d.push(Detection::pixel(
                random_box(&mut rng),
                score(&mut rng),
                1.0,
                8,
            ));
        }
        dets.push(d);
        gts.push(g);
    }
    MicroDataset { dets, gts }
}
