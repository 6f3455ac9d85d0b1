//! The three loss terms as tape operations with hand-derived gradients.

use crate::autograd::{Function, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// `log(1 + e^x)` without overflow.
fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn sigmoid(x: f64) -> f64 {
    crate::ops::sigmoid_scalar(x)
}

fn scalar(v: f64) -> Tensor {
    Tensor::scalar(v)
}

fn grad_tensor(like: &Tensor, data: Vec<f64>) -> Result<Option<Tensor>> {
    Tensor::new(like.shape().to_vec(), data).map(Some)
}

/// Sigmoid focal loss terms `(loss, d loss / d logit)` for one location.
fn focal_term(x: f64, target: bool, alpha: f64, gamma: f64) -> (f64, f64) {
    let p = sigmoid(x);
    if target {
        // log p = -softplus(-x)
        let log_p = -softplus(-x);
        let w = (1.0 - p).powf(gamma);
        (
            -alpha * w * log_p,
            alpha * w * (gamma * p * log_p - (1.0 - p)),
        )
    } else {
        let log_q = -softplus(x);
        let w = p.powf(gamma);
        (
            -(1.0 - alpha) * w * log_q,
            (1.0 - alpha) * w * (p - gamma * (1.0 - p) * log_q),
        )
    }
}

struct Focal {
    targets: Vec<bool>,
    alpha: f64,
    gamma: f64,
    norm: f64,
}

impl Function for Focal {
    fn name(&self) -> &'static str {
        "focal_loss"
    }

    fn backward(&self, x: &[&Tensor], _: &Tensor, g: &Tensor) -> Result<Vec<Option<Tensor>>> {
        let g = g.data()[0] / self.norm;
        let d = x[0]
            .data()
            .iter()
            .zip(&self.targets)
            .map(|(&v, &t)| g * focal_term(v, t, self.alpha, self.gamma).1)
            .collect();
        Ok(vec![grad_tensor(x[0], d)?])
    }
}

/// `Σ −α_t (1 − p_t)^γ log p_t / normalizer` over every logit.
pub fn focal_loss<'t>(
    logits: Var<'t>,
    targets: &[bool],
    alpha: f64,
    gamma: f64,
    normalizer: f64,
) -> Result<Var<'t>> {
    let x = logits.value();
    if x.numel() != targets.len() {
        return Err(Error::shape(
            "focal_loss",
            format!("{} logits vs {} targets", x.numel(), targets.len()),
        ));
    }
    let total: f64 = x
        .data()
        .iter()
        .zip(targets)
        .map(|(&v, &t)| focal_term(v, t, alpha, gamma).0)
        .sum();
    logits.tape().record(
        &[logits],
        scalar(total / normalizer),
        Focal {
            targets: targets.to_vec(),
            alpha,
            gamma,
            norm: normalizer,
        },
    )
}

/// `(1 − GIoU, gradient wrt predicted l,t,r,b)` for two boxes sharing an
/// anchor point, both given as side distances from that point.
fn giou_term(p: [f64; 4], q: [f64; 4]) -> (f64, [f64; 4]) {
    let [l, t, r, b] = p;
    let ap = (l + r) * (t + b);
    let at = (q[0] + q[2]) * (q[1] + q[3]);
    let wi = l.min(q[0]) + r.min(q[2]);
    let hi = t.min(q[1]) + b.min(q[3]);
    let inter = wi * hi;
    let union = ap + at - inter;
    let wc = l.max(q[0]) + r.max(q[2]);
    let hc = t.max(q[1]) + b.max(q[3]);
    let c = wc * hc;
    let loss = 2.0 - inter / union - union / c;

    let mut grad = [0.0; 4];
    for k in 0..4 {
        let horizontal = k % 2 == 0;
        let (cross_i, cross_p, cross_c) = if horizontal {
            (hi, t + b, hc)
        } else {
            (wi, l + r, wc)
        };
        let d_inter = if p[k] < q[k] { cross_i } else { 0.0 };
        let d_c = if p[k] > q[k] { cross_c } else { 0.0 };
        let d_union = cross_p - d_inter;
        let d_iou = d_inter / union - inter * d_union / (union * union);
        let d_ratio = d_union / c - union * d_c / (c * c);
        grad[k] = -d_iou - d_ratio;
    }
    (loss, grad)
}

struct Giou {
    positives: Vec<(usize, [f64; 4])>,
    norm: f64,
}

impl Function for Giou {
    fn name(&self) -> &'static str {
        "giou_loss"
    }

    fn backward(&self, x: &[&Tensor], _: &Tensor, g: &Tensor) -> Result<Vec<Option<Tensor>>> {
        let g = g.data()[0] / self.norm;
        let pred = x[0].data();
        let mut d = vec![0.0; pred.len()];
        for &(i, target) in &self.positives {
            let p = std::array::from_fn(|k| pred[4 * i + k]);
            let (_, grad) = giou_term(p, target);
            for k in 0..4 {
                d[4 * i + k] = g * grad[k];
            }
        }
        Ok(vec![grad_tensor(x[0], d)?])
    }
}

/// Mean of `1 − GIoU` over positive locations.
///
/// `distances` is `[..., 4]` of predicted `(l, t, r, b)`; `positives` lists
/// `(location, target ltrb)` pairs. Returns 0 when there are no positives.
pub fn giou_loss<'t>(distances: Var<'t>, positives: &[(usize, [f64; 4])]) -> Result<Var<'t>> {
    let pred = distances.value();
    let n = pred.numel() / 4;
    if pred.shape().last() != Some(&4) {
        return Err(Error::shape(
            "giou_loss",
            format!("{:?} is not [..., 4]", pred.shape()),
        ));
    }
    let mut total = 0.0;
    for &(i, q) in positives {
        if i >= n {
            return Err(Error::InvalidInput(format!(
                "positive index {i} out of {n}"
            )));
        }
        let p: [f64; 4] = std::array::from_fn(|k| pred.data()[4 * i + k]);
        for (d, name) in [(p, "predicted"), (q, "target")] {
            if d.iter().any(|v| !(*v > 0.0)) {
                return Err(Error::InvalidInput(format!(
                    "{name} distances must be positive, got {d:?}"
                )));
            }
        }
        total += giou_term(p, q).0;
    }
    let norm = positives.len().max(1) as f64;
    distances.tape().record(
        &[distances],
        scalar(total / norm),
        Giou {
            positives: positives.to_vec(),
            norm,
        },
    )
}

struct CenternessBce {
    positives: Vec<(usize, f64)>,
    norm: f64,
}

impl Function for CenternessBce {
    fn name(&self) -> &'static str {
        "centerness_bce"
    }

    fn backward(&self, x: &[&Tensor], _: &Tensor, g: &Tensor) -> Result<Vec<Option<Tensor>>> {
        let g = g.data()[0] / self.norm;
        let logits = x[0].data();
        let mut d = vec![0.0; logits.len()];
        for &(i, t) in &self.positives {
            d[i] = g * (sigmoid(logits[i]) - t);
        }
        Ok(vec![grad_tensor(x[0], d)?])
    }
}

/// Mean binary cross-entropy with logits over `(location, target)` pairs.
pub fn centerness_bce<'t>(logits: Var<'t>, positives: &[(usize, f64)]) -> Result<Var<'t>> {
    let x = logits.value();
    let mut total = 0.0;
    for &(i, t) in positives {
        if i >= x.numel() {
            return Err(Error::InvalidInput(format!(
                "positive index {i} out of {}",
                x.numel()
            )));
        }
        if !(0.0..=1.0).contains(&t) {
            return Err(Error::InvalidInput(format!(
                "BCE target {t} outside [0, 1]"
            )));
        }
        let v = x.data()[i];
        total += softplus(v) - t * v;
    }
    let norm = positives.len().max(1) as f64;
    logits.tape().record(
        &[logits],
        scalar(total / norm),
        CenternessBce {
            positives: positives.to_vec(),
            norm,
        },
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autograd::Tape;

    #[test]
    fn focal_examples() {
        let (l, _) = focal_term(0.0, true, 0.25, 2.0);
        assert!((l - 0.25 * 0.25 * std::f64::consts::LN_2).abs() < 1e-15);
        assert!(focal_term(40.0, true, 0.25, 2.0).0 < 1e-30);
        assert!(focal_term(-40.0, false, 0.25, 2.0).0 < 1e-30);
        for (x, t) in [(0.3, true), (-1.2, false), (2.5, false)] {
            let bce = if t { softplus(-x) } else { softplus(x) };
            assert!((focal_term(x, t, 0.5, 0.0).0 - 0.5 * bce).abs() < 1e-15);
        }
    }

    #[test]
    fn giou_examples_from_distances() {
        // A = (0,0,1,1) and B = (1,1,2,2) seen from anchor (0.5, 0.5).
        let a = [0.5, 0.5, 0.5, 0.5];
        let b = [-0.5, -0.5, 1.5, 1.5];
        assert!((giou_term(a, b).0 - 1.5).abs() < 1e-15);
        assert!(giou_term(a, a).0.abs() < 1e-15);
        // A = (0,0,2,2), B = (1,0,2,2) from anchor (1.5, 1).
        assert!((giou_term([1.5, 1.0, 0.5, 1.0], [0.5, 1.0, 0.5, 1.0]).0 - 0.5).abs() < 1e-15);
    }

    #[test]
    fn bce_examples_and_empty() {
        let tape = Tape::new();
        let x = tape.constant(Tensor::new([3], vec![0.0, 20.0, 1.0]).unwrap());
        let l = centerness_bce(x, &[(0, 0.5)])
            .unwrap()
            .value()
            .item()
            .unwrap();
        assert!((l - std::f64::consts::LN_2).abs() < 1e-15);
        let l = centerness_bce(x, &[(1, 1.0)])
            .unwrap()
            .value()
            .item()
            .unwrap();
        assert!(l < 1e-8);
        assert_eq!(centerness_bce(x, &[]).unwrap().value().item().unwrap(), 0.0);
        let d = tape.constant(Tensor::ones([2, 4]));
        assert_eq!(giou_loss(d, &[]).unwrap().value().item().unwrap(), 0.0);
    }

    #[test]
    fn invalid_inputs_error() {
        let tape = Tape::new();
        let d = tape.constant(Tensor::new([1, 4], vec![1.0, -1.0, 1.0, 1.0]).unwrap());
        assert!(giou_loss(d, &[(0, [1.0; 4])]).is_err());
        let x = tape.constant(Tensor::zeros([2]));
        assert!(focal_loss(x, &[true], 0.25, 2.0, 1.0).is_err());
        assert!(centerness_bce(x, &[(0, 1.5)]).is_err());
    }
}
