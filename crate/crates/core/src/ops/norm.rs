//! Batch normalization over NCHW maps and layer normalization over the last axis.

use serde::{Deserialize, Serialize};

use crate::autograd::{Function, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NormMode {
    Train,
    Eval,
}

/// Per-channel running statistics used in eval mode.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunningStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

impl RunningStats {
    pub fn new(channels: usize) -> Self {
        RunningStats {
            mean: vec![0.0; channels],
            var: vec![1.0; channels],
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BatchNormOptions {
    pub mode: NormMode,
    pub eps: f64,
    pub momentum: f64,
}

impl Default for BatchNormOptions {
    fn default() -> Self {
        BatchNormOptions {
            mode: NormMode::Train,
            eps: 1e-5,
            momentum: 0.1,
        }
    }
}

/// Normalized input and the per-channel inverse std, saved for backward.
struct BatchNorm {
    xhat: Vec<f64>,
    inv_std: Vec<f64>,
    batch_stats: bool,
}

impl Function for BatchNorm {
    fn name(&self) -> &'static str {
        "batch_norm2d"
    }

    fn backward(&self, x: &[&Tensor], _: &Tensor, g: &Tensor) -> Result<Vec<Option<Tensor>>> {
        let shape = x[0].shape();
        let (n, c, plane) = (shape[0], shape[1], shape[2] * shape[3]);
        let m = (n * plane) as f64;
        let gamma = x[1].data();
        let gd = g.data();
        let mut dx = vec![0.0; gd.len()];
        let mut dgamma = vec![0.0; c];
        let mut dbeta = vec![0.0; c];
        for ch in 0..c {
            let (mut sg, mut sgx) = (0.0, 0.0);
            for b in 0..n {
                let base = (b * c + ch) * plane;
                for i in base..base + plane {
                    sg += gd[i];
                    sgx += gd[i] * self.xhat[i];
                }
            }
            dgamma[ch] = sgx;
            dbeta[ch] = sg;
            let k = gamma[ch] * self.inv_std[ch];
            for b in 0..n {
                let base = (b * c + ch) * plane;
                for i in base..base + plane {
                    dx[i] = if self.batch_stats {
                        k * (gd[i] - sg / m - self.xhat[i] * sgx / m)
                    } else {
                        k * gd[i]
                    };
                }
            }
        }
        Ok(vec![
            Some(Tensor::new(shape.to_vec(), dx)?),
            Some(Tensor::new([c], dgamma)?),
            Some(Tensor::new([c], dbeta)?),
        ])
    }
}

struct LayerNorm {
    xhat: Vec<f64>,
    inv_std: Vec<f64>,
}

impl Function for LayerNorm {
    fn name(&self) -> &'static str {
        "layer_norm"
    }

    fn backward(&self, x: &[&Tensor], _: &Tensor, g: &Tensor) -> Result<Vec<Option<Tensor>>> {
        let d = x[1].numel();
        let gamma = x[1].data();
        let gd = g.data();
        let mut dx = vec![0.0; gd.len()];
        let mut dgamma = vec![0.0; d];
        let mut dbeta = vec![0.0; d];
        for (r, &inv) in self.inv_std.iter().enumerate() {
            let row = r * d..(r + 1) * d;
            let (gr, xr) = (&gd[row.clone()], &self.xhat[row.clone()]);
            let (mut s, mut sx) = (0.0, 0.0);
            for j in 0..d {
                let dxhat = gr[j] * gamma[j];
                s += dxhat;
                sx += dxhat * xr[j];
                dgamma[j] += gr[j] * xr[j];
                dbeta[j] += gr[j];
            }
            let dn = d as f64;
            for j in 0..d {
                dx[r * d + j] = inv * (gr[j] * gamma[j] - s / dn - xr[j] * sx / dn);
            }
        }
        Ok(vec![
            Some(Tensor::new(x[0].shape().to_vec(), dx)?),
            Some(Tensor::new([d], dgamma)?),
            Some(Tensor::new([d], dbeta)?),
        ])
    }
}

impl<'t> Var<'t> {
    /// Batch normalization of an NCHW map.
    ///
    /// Train mode normalizes with the biased batch variance and updates
    /// `stats` with momentum (unbiased variance, as is conventional); eval
    /// mode normalizes with `stats` and leaves them untouched.
    pub fn batch_norm2d(
        self,
        gamma: Var<'t>,
        beta: Var<'t>,
        stats: &mut RunningStats,
        opts: BatchNormOptions,
    ) -> Result<Var<'t>> {
        let x = self.value();
        if x.ndim() != 4 {
            return Err(Error::shape(
                "batch_norm2d",
                format!("input {:?}", x.shape()),
            ));
        }
        let (n, c, plane) = (x.dim(0), x.dim(1), x.dim(2) * x.dim(3));
        let (gv, bv) = (gamma.value(), beta.value());
        if gv.shape() != [c] || bv.shape() != [c] || stats.mean.len() != c || stats.var.len() != c {
            return Err(Error::shape(
                "batch_norm2d",
                format!(
                    "{c} channels, gamma {:?}, beta {:?}",
                    gv.shape(),
                    bv.shape()
                ),
            ));
        }
        if !(opts.eps >= 0.0) {
            return Err(Error::Config(format!(
                "batch_norm2d eps must be >= 0, got {}",
                opts.eps
            )));
        }
        let train = opts.mode == NormMode::Train;
        if train && n * plane == 0 {
            return Err(Error::InvalidInput(
                "batch_norm2d: empty batch in train mode".into(),
            ));
        }
        let xd = x.data();
        let m = (n * plane) as f64;
        let mut xhat = vec![0.0; xd.len()];
        let mut out = vec![0.0; xd.len()];
        let mut inv_std = vec![0.0; c];
        for ch in 0..c {
            let indices =
                || (0..n).flat_map(move |b| (b * c + ch) * plane..(b * c + ch + 1) * plane);
            let (mean, var) = if train {
                let mean = indices().map(|i| xd[i]).sum::<f64>() / m;
                let var = indices().map(|i| (xd[i] - mean).powi(2)).sum::<f64>() / m;
                let unbiased = if m > 1.0 { var * m / (m - 1.0) } else { var };
                stats.mean[ch] = (1.0 - opts.momentum) * stats.mean[ch] + opts.momentum * mean;
                stats.var[ch] = (1.0 - opts.momentum) * stats.var[ch] + opts.momentum * unbiased;
                (mean, var)
            } else {
                (stats.mean[ch], stats.var[ch])
            };
            let inv = 1.0 / (var + opts.eps).sqrt();
            inv_std[ch] = inv;
            for i in indices() {
                xhat[i] = (xd[i] - mean) * inv;
                out[i] = gv.data()[ch] * xhat[i] + bv.data()[ch];
            }
        }
        let out = Tensor::new(x.shape().to_vec(), out)?;
        self.tape().record(
            &[self, gamma, beta],
            out,
            BatchNorm {
                xhat,
                inv_std,
                batch_stats: train,
            },
        )
    }

    /// Layer normalization over the last axis with affine `gamma`, `beta`.
    pub fn layer_norm(self, gamma: Var<'t>, beta: Var<'t>, eps: f64) -> Result<Var<'t>> {
        let x = self.value();
        let d = *x
            .shape()
            .last()
            .ok_or_else(|| Error::shape("layer_norm", "scalar input"))?;
        let (gv, bv) = (gamma.value(), beta.value());
        if d == 0 || gv.shape() != [d] || bv.shape() != [d] {
            return Err(Error::shape(
                "layer_norm",
                format!(
                    "input {:?}, gamma {:?}, beta {:?}",
                    x.shape(),
                    gv.shape(),
                    bv.shape()
                ),
            ));
        }
        let xd = x.data();
        let rows = xd.len() / d;
        let mut xhat = vec![0.0; xd.len()];
        let mut out = vec![0.0; xd.len()];
        let mut inv_std = vec![0.0; rows];
        for r in 0..rows {
            let row = &xd[r * d..(r + 1) * d];
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / d as f64;
            let inv = 1.0 / (var + eps).sqrt();
            inv_std[r] = inv;
            for j in 0..d {
                let h = (row[j] - mean) * inv;
                xhat[r * d + j] = h;
                out[r * d + j] = gv.data()[j] * h + bv.data()[j];
            }
        }
        let out = Tensor::new(x.shape().to_vec(), out)?;
        self.tape()
            .record(&[self, gamma, beta], out, LayerNorm { xhat, inv_std })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autograd::Tape;

    fn bn(
        x: Tensor,
        gamma: f64,
        beta: f64,
        stats: &mut RunningStats,
        mode: NormMode,
        eps: f64,
    ) -> Result<Tensor> {
        let tape = Tape::new();
        let c = x.dim(1);
        let x = tape.constant(x);
        let g = tape.constant(Tensor::full([c], gamma));
        let b = tape.constant(Tensor::full([c], beta));
        let opts = BatchNormOptions {
            mode,
            eps,
            momentum: 0.1,
        };
        Ok((*x.batch_norm2d(g, b, stats, opts)?.value()).clone())
    }

    #[test]
    fn eval_with_matching_running_mean_gives_zeros() {
        let mut stats = RunningStats {
            mean: vec![2.5],
            var: vec![1.0],
        };
        let y = bn(
            Tensor::full([2, 1, 2, 2], 2.5),
            1.0,
            0.0,
            &mut stats,
            NormMode::Eval,
            1e-5,
        )
        .unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));
        assert_eq!(stats.mean, vec![2.5]);
    }

    #[test]
    fn train_normalizes_two_values() {
        let mut stats = RunningStats::new(1);
        let x = Tensor::new([1, 1, 1, 2], vec![1.0, 3.0]).unwrap();
        let y = bn(x, 1.0, 0.0, &mut stats, NormMode::Train, 0.0).unwrap();
        assert_eq!(y.data(), &[-1.0, 1.0]);
        // running mean moves 10% toward 2, variance toward unbiased 2
        assert!((stats.mean[0] - 0.2).abs() < 1e-12);
        assert!((stats.var[0] - (0.9 + 0.2)).abs() < 1e-12);
    }

    #[test]
    fn zero_gamma_yields_beta() {
        let mut stats = RunningStats::new(2);
        let x = Tensor::from_fn([2, 2, 3, 3], |i| (i as f64).sin());
        let y = bn(x, 0.0, 0.7, &mut stats, NormMode::Train, 1e-5).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.7));
    }

    #[test]
    fn empty_train_batch_is_rejected() {
        let mut stats = RunningStats::new(1);
        assert!(bn(
            Tensor::zeros([0, 1, 2, 2]),
            1.0,
            0.0,
            &mut stats,
            NormMode::Train,
            1e-5
        )
        .is_err());
    }

    #[test]
    fn layer_norm_rows_are_standardized() {
        let tape = Tape::new();
        let x = tape.constant(Tensor::from_fn([3, 4], |i| (i * i) as f64));
        let g = tape.constant(Tensor::ones([4]));
        let b = tape.constant(Tensor::zeros([4]));
        let y = x.layer_norm(g, b, 0.0).unwrap().value();
        for r in 0..3 {
            let row = &y.data()[r * 4..(r + 1) * 4];
            let mean: f64 = row.iter().sum::<f64>() / 4.0;
            let var: f64 = row.iter().map(|v| v * v).sum::<f64>() / 4.0;
            assert!(mean.abs() < 1e-12 && (var - 1.0).abs() < 1e-12);
        }
    }
}
