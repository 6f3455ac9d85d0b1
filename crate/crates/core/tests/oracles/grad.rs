//! Finite-difference cases for every differentiable op and loss.
//!
//! Inputs are drawn away from kinks (relu at 0, max-pool ties, GIoU where a
//! predicted side equals the target side), where central differences are
//! meaningless.

use canopy_core::gradcheck::{check, project, GradCheckReport, DEFAULT_STEP};
use canopy_core::objectives::{centerness_bce, focal_loss, giou_loss, total_loss, LossWeights};
use canopy_core::ops::{BatchNormOptions, Conv2dOptions, NormMode, RunningStats};
use canopy_core::{Result, Tensor, Var};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const CASES: &[&str] = &[
    "add",
    "sub",
    "mul",
    "scale",
    "mul_scalar",
    "relu",
    "sigmoid",
    "exp",
    "sum",
    "mean",
    "softmax",
    "bias_add",
    "matmul",
    "attention",
    "conv2d",
    "batch_norm2d_train",
    "batch_norm2d_eval",
    "layer_norm",
    "max_pool2d",
    "global_avg_pool",
    "nearest_upsample",
    "reshape",
    "permute",
    "narrow",
    "expand",
    "concat",
    "focal_loss",
    "giou_loss",
    "centerness_bce",
    "total_loss",
];

fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    Tensor::from_fn(shape.to_vec(), |_| rng.random_range(lo..hi))
}

/// A tensor of `n` axes, each of size in `[lo, hi]`, with values in `[vlo, vhi)`.
fn shaped(rng: &mut ChaCha8Rng, n: usize, lo: usize, hi: usize, vlo: f64, vhi: f64) -> Tensor {
    let s = dims(rng, n, lo, hi);
    uniform(rng, &s, vlo, vhi)
}

fn dims(rng: &mut ChaCha8Rng, n: usize, lo: usize, hi: usize) -> Vec<usize> {
    (0..n).map(|_| rng.random_range(lo..=hi)).collect()
}

/// Values at least 0.04 apart, in random order.
fn distinct(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n: usize = shape.iter().product();
    let mut v: Vec<f64> = (0..n)
        .map(|i| i as f64 * 0.05 - 1.0 + rng.random_range(0.0..0.01))
        .collect();
    v.shuffle(rng);
    Tensor::new(shape.to_vec(), v).unwrap()
}

/// Side distances in `[0.5, 3)` kept at least 0.01 from `avoid`.
fn sides(rng: &mut ChaCha8Rng, avoid: Option<[f64; 4]>) -> [f64; 4] {
    std::array::from_fn(|k| loop {
        let v = rng.random_range(0.5..3.0);
        if avoid.is_none_or(|a| (a[k] - v).abs() > 0.01) {
            break v;
        }
    })
}

/// Predicted distances `[n, 4]` and positives with targets.
fn giou_instance(rng: &mut ChaCha8Rng) -> (Tensor, Vec<(usize, [f64; 4])>) {
    let n = rng.random_range(1..=6);
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    idx.truncate(rng.random_range(1..=n));
    let targets: Vec<(usize, [f64; 4])> = idx.iter().map(|&i| (i, sides(rng, None))).collect();
    let mut data = vec![];
    for i in 0..n {
        let avoid = targets.iter().find(|t| t.0 == i).map(|t| t.1);
        data.extend(sides(rng, avoid));
    }
    (Tensor::new(vec![n, 4], data).unwrap(), targets)
}

fn focal_instance(rng: &mut ChaCha8Rng) -> (Tensor, Vec<bool>, f64, f64) {
    let n = rng.random_range(1..=12);
    let logits = uniform(rng, &[n], -3.0, 3.0);
    let targets: Vec<bool> = (0..n).map(|_| rng.random_bool(0.3)).collect();
    (
        logits,
        targets,
        rng.random_range(0.1..0.9),
        rng.random_range(0.0..3.0),
    )
}

fn bce_instance(rng: &mut ChaCha8Rng) -> (Tensor, Vec<(usize, f64)>) {
    let n = rng.random_range(1..=10);
    let logits = uniform(rng, &[n], -4.0, 4.0);
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    idx.truncate(rng.random_range(0..=n));
    let pos = idx
        .into_iter()
        .map(|i| (i, rng.random_range(0.0..=1.0)))
        .collect();
    (logits, pos)
}

fn run(
    inputs: &[Tensor],
    f: impl for<'t> Fn(&'t canopy_core::Tape, &[Var<'t>]) -> Result<Var<'t>>,
) -> Result<GradCheckReport> {
    check(inputs, f, DEFAULT_STEP)
}

/// Runs one named case; the seed picks shapes, values and the projection.
pub fn check_case(name: &str, seed: u64) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    let r = &mut rng;
    let p = seed;
    match name {
        "add" | "sub" | "mul" => {
            let s = dims(r, 3, 1, 4);
            let (a, b) = (uniform(r, &s, -2.0, 2.0), uniform(r, &s, -2.0, 2.0));
            let op = name.to_string();
            run(&[a, b], move |_, v| {
                let y = match op.as_str() {
                    "add" => v[0].add(v[1])?,
                    "sub" => v[0].sub(v[1])?,
                    _ => v[0].mul(v[1])?,
                };
                project(y, p)
            })
        }
        "scale" => {
            let c = r.random_range(-3.0..3.0);
            let x = shaped(r, 2, 1, 5, -2.0, 2.0);
            run(&[x], move |_, v| project(v[0].scale(c)?, p))
        }
        "mul_scalar" => {
            let x = shaped(r, 3, 1, 4, -2.0, 2.0);
            let s = uniform(r, &[1], -2.0, 2.0);
            run(&[x, s], move |_, v| project(v[0].mul_scalar(v[1])?, p))
        }
        "relu" => {
            let s = dims(r, 2, 1, 6);
            let x = Tensor::from_fn(s, |_| {
                let m = r.random_range(0.05..2.0);
                if r.random_bool(0.5) {
                    m
                } else {
                    -m
                }
            });
            run(&[x], move |_, v| project(v[0].relu()?, p))
        }
        "sigmoid" | "exp" => {
            let x = shaped(r, 2, 1, 6, -2.0, 2.0);
            let exp = name == "exp";
            run(&[x], move |_, v| {
                project(if exp { v[0].exp()? } else { v[0].sigmoid()? }, p)
            })
        }
        "sum" | "mean" => {
            let x = shaped(r, 3, 1, 4, -2.0, 2.0);
            let w = uniform(r, x.shape(), -1.0, 1.0);
            let mean = name == "mean";
            // Weight first so the reduction's input gradient is not constant.
            run(&[x], move |t, v| {
                let y = v[0].mul(t.constant(w.clone()))?;
                let s = if mean { y.mean()? } else { y.sum()? };
                s.mul(s)
            })
        }
        "softmax" => {
            let s = dims(r, 3, 1, 4);
            let axis = r.random_range(0..3);
            let x = uniform(r, &s, -3.0, 3.0);
            run(&[x], move |_, v| project(v[0].softmax(axis)?, p))
        }
        "bias_add" => {
            let nchw = r.random_bool(0.5);
            let s = if nchw {
                dims(r, 4, 1, 3)
            } else {
                dims(r, 2, 1, 5)
            };
            let axis = r.random_range(0..s.len());
            let x = uniform(r, &s, -2.0, 2.0);
            let b = uniform(r, &[s[axis]], -2.0, 2.0);
            run(&[x, b], move |_, v| project(v[0].bias_add(v[1], axis)?, p))
        }
        "matmul" => {
            let [bt, m, k, n] = [
                r.random_range(1..=2),
                r.random_range(1..=4),
                r.random_range(1..=4),
                r.random_range(1..=4),
            ];
            let a = uniform(r, &[bt, m, k], -2.0, 2.0);
            let b = uniform(r, &[bt, k, n], -2.0, 2.0);
            run(&[a, b], move |_, v| project(v[0].matmul(v[1])?, p))
        }
        "attention" => {
            let s = [
                r.random_range(1..=2),
                r.random_range(1..=6),
                r.random_range(1..=4),
            ];
            let q = uniform(r, &s, -1.5, 1.5);
            let k = uniform(r, &s, -1.5, 1.5);
            let vv = uniform(r, &s, -1.5, 1.5);
            run(&[q, k, vv], move |_, v| {
                project(v[0].attention(v[1], v[2])?, p)
            })
        }
        "conv2d" => loop {
            let (n, c, o) = (
                r.random_range(1..=2),
                r.random_range(1..=3),
                r.random_range(1..=3),
            );
            let (h, w) = (r.random_range(3..=7), r.random_range(3..=7));
            let k = r.random_range(1..=3);
            let opts = Conv2dOptions::new(
                r.random_range(1..=2),
                r.random_range(0..=2),
                r.random_range(1..=2),
            );
            let span = opts.dilation * (k - 1) + 1;
            if h + 2 * opts.padding < span || w + 2 * opts.padding < span {
                continue;
            }
            let x = uniform(r, &[n, c, h, w], -1.0, 1.0);
            let wt = uniform(r, &[o, c, k, k], -1.0, 1.0);
            if r.random_bool(0.5) {
                let b = uniform(r, &[o], -1.0, 1.0);
                break run(&[x, wt, b], move |_, v| {
                    project(v[0].conv2d(v[1], Some(v[2]), opts)?, p)
                });
            }
            break run(&[x, wt], move |_, v| {
                project(v[0].conv2d(v[1], None, opts)?, p)
            });
        },
        "batch_norm2d_train" | "batch_norm2d_eval" => {
            let train = name.ends_with("train");
            let mut s = dims(r, 4, 1, 3);
            if s[0] * s[2] * s[3] < 2 {
                s[2] = 2;
            }
            let c = s[1];
            let x = uniform(r, &s, -2.0, 2.0);
            let gamma = uniform(r, &[c], 0.5, 1.5);
            let beta = uniform(r, &[c], -1.0, 1.0);
            let stats = RunningStats {
                mean: (0..c).map(|_| r.random_range(-0.5..0.5)).collect(),
                var: (0..c).map(|_| r.random_range(0.5..2.0)).collect(),
            };
            let opts = BatchNormOptions {
                mode: if train {
                    NormMode::Train
                } else {
                    NormMode::Eval
                },
                ..Default::default()
            };
            run(&[x, gamma, beta], move |_, v| {
                let mut st = stats.clone();
                project(v[0].batch_norm2d(v[1], v[2], &mut st, opts)?, p)
            })
        }
        "layer_norm" => {
            let (rows, d) = (r.random_range(1..=4), r.random_range(2..=6));
            let x = uniform(r, &[rows, d], -2.0, 2.0);
            let gamma = uniform(r, &[d], 0.5, 1.5);
            let beta = uniform(r, &[d], -1.0, 1.0);
            run(&[x, gamma, beta], move |_, v| {
                project(v[0].layer_norm(v[1], v[2], 1e-5)?, p)
            })
        }
        "max_pool2d" => {
            let k = r.random_range(2..=3);
            let (stride, pad) = (r.random_range(1..=2), r.random_range(0..=k / 2));
            let s = [
                r.random_range(1..=2),
                r.random_range(1..=2),
                r.random_range(k..=6),
                r.random_range(k..=6),
            ];
            let x = distinct(r, &s);
            run(&[x], move |_, v| {
                project(v[0].max_pool2d(k, stride, pad)?, p)
            })
        }
        "global_avg_pool" => {
            let x = shaped(r, 4, 1, 4, -2.0, 2.0);
            run(&[x], move |_, v| project(v[0].global_avg_pool()?, p))
        }
        "nearest_upsample" => {
            let (fy, fx) = (r.random_range(1..=3), r.random_range(1..=3));
            let x = shaped(r, 4, 1, 3, -2.0, 2.0);
            run(&[x], move |_, v| project(v[0].nearest_upsample(fy, fx)?, p))
        }
        "reshape" => {
            let s = dims(r, 3, 1, 4);
            let x = uniform(r, &s, -2.0, 2.0);
            let to = vec![s[0] * s[1], s[2]];
            run(&[x], move |_, v| project(v[0].reshape(to.clone())?, p))
        }
        "permute" => {
            let s = dims(r, 3, 1, 4);
            let mut perm = vec![0, 1, 2];
            perm.shuffle(r);
            let x = uniform(r, &s, -2.0, 2.0);
            run(&[x], move |_, v| project(v[0].permute(&perm)?, p))
        }
        "narrow" => {
            let s = dims(r, 3, 1, 5);
            let axis = r.random_range(0..3);
            let start = r.random_range(0..s[axis]);
            let len = r.random_range(1..=s[axis] - start);
            let x = uniform(r, &s, -2.0, 2.0);
            run(&[x], move |_, v| project(v[0].narrow(axis, start, len)?, p))
        }
        "expand" => {
            let mut s = dims(r, 3, 1, 4);
            let axis = r.random_range(0..3);
            s[axis] = 1;
            let n = r.random_range(1..=4);
            let x = uniform(r, &s, -2.0, 2.0);
            run(&[x], move |_, v| project(v[0].expand(axis, n)?, p))
        }
        "concat" => {
            let s = dims(r, 3, 1, 3);
            let axis = r.random_range(0..3);
            let parts: Vec<Tensor> = (0..r.random_range(2..=3))
                .map(|_| {
                    let mut si = s.clone();
                    si[axis] = r.random_range(1..=3);
                    uniform(r, &si, -2.0, 2.0)
                })
                .collect();
            run(&parts, move |_, v| project(Var::concat(v, axis)?, p))
        }
        "focal_loss" => {
            let (x, targets, alpha, gamma) = focal_instance(r);
            let norm = targets.iter().filter(|t| **t).count().max(1) as f64;
            run(&[x], move |_, v| {
                focal_loss(v[0], &targets, alpha, gamma, norm)
            })
        }
        "giou_loss" => {
            let (x, pos) = giou_instance(r);
            run(&[x], move |_, v| giou_loss(v[0], &pos))
        }
        "centerness_bce" => {
            let (x, pos) = bce_instance(r);
            run(&[x], move |_, v| centerness_bce(v[0], &pos))
        }
        "total_loss" => {
            let (fx, targets, alpha, gamma) = focal_instance(r);
            let (gx, gpos) = giou_instance(r);
            let (bx, bpos) = bce_instance(r);
            let w = LossWeights::default();
            run(&[fx, gx, bx], move |_, v| {
                total_loss(
                    focal_loss(v[0], &targets, alpha, gamma, 1.0)?,
                    giou_loss(v[1], &gpos)?,
                    centerness_bce(v[2], &bpos)?,
                    &w,
                )
            })
        }
        other => panic!("unknown gradient case {other}"),
    }
}
