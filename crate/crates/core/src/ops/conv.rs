//! 2-D convolution (cross-correlation) via im2col + GEMM.

use crate::autograd::{Function, Var};
use crate::error::{Error, Result};
use crate::gemm::{gemm, MatRef};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Conv2dOptions {
    pub stride: usize,
    pub padding: usize,
    pub dilation: usize,
}

impl Default for Conv2dOptions {
    fn default() -> Self {
        Conv2dOptions {
            stride: 1,
            padding: 0,
            dilation: 1,
        }
    }
}

impl Conv2dOptions {
    pub fn new(stride: usize, padding: usize, dilation: usize) -> Self {
        Conv2dOptions {
            stride,
            padding,
            dilation,
        }
    }
}

/// Output extent `floor((size + 2p - d(k-1) - 1) / s) + 1`.
pub fn conv_output_size(size: usize, kernel: usize, opts: Conv2dOptions) -> Result<usize> {
    if opts.stride == 0 || opts.dilation == 0 || kernel == 0 {
        return Err(Error::Config(format!(
            "conv2d needs stride, dilation and kernel >= 1, got {opts:?} kernel {kernel}"
        )));
    }
    let span = opts.dilation * (kernel - 1) + 1;
    let padded = size + 2 * opts.padding;
    if padded < span {
        return Err(Error::Config(format!(
            "conv2d output would be empty: input {size}, kernel {kernel}, {opts:?}"
        )));
    }
    Ok((padded - span) / opts.stride + 1)
}

#[derive(Clone, Copy)]
struct Geometry {
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    ho: usize,
    wo: usize,
    opts: Conv2dOptions,
}

impl Geometry {
    fn rows(&self) -> usize {
        self.c * self.kh * self.kw
    }
    fn cols(&self) -> usize {
        self.n * self.ho * self.wo
    }

    /// Input coordinate read by output position `out` at kernel tap `tap`,
    /// or `None` inside the zero padding.
    #[inline]
    fn src(&self, out: usize, tap: usize, size: usize) -> Option<usize> {
        let pos = (out * self.opts.stride + tap * self.opts.dilation) as isize
            - self.opts.padding as isize;
        (pos >= 0 && (pos as usize) < size).then_some(pos as usize)
    }
}

/// `[C*Kh*Kw, N*Ho*Wo]` column matrix.
fn im2col(x: &[f64], g: &Geometry) -> Vec<f64> {
    let (p, cols) = (g.ho * g.wo, g.cols());
    let mut out = vec![0.0; g.rows() * cols];
    for c in 0..g.c {
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (c * g.kh + ki) * g.kw + kj;
                let dst_row = &mut out[row * cols..(row + 1) * cols];
                for n in 0..g.n {
                    let plane = &x[(n * g.c + c) * g.h * g.w..(n * g.c + c + 1) * g.h * g.w];
                    for oy in 0..g.ho {
                        let Some(iy) = g.src(oy, ki, g.h) else {
                            continue;
                        };
                        let dst = &mut dst_row[n * p + oy * g.wo..n * p + (oy + 1) * g.wo];
                        for (ox, d) in dst.iter_mut().enumerate() {
                            if let Some(ix) = g.src(ox, kj, g.w) {
                                *d = plane[iy * g.w + ix];
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

fn col2im(cols_data: &[f64], g: &Geometry) -> Vec<f64> {
    let (p, cols) = (g.ho * g.wo, g.cols());
    let mut dx = vec![0.0; g.n * g.c * g.h * g.w];
    for c in 0..g.c {
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (c * g.kh + ki) * g.kw + kj;
                let src_row = &cols_data[row * cols..(row + 1) * cols];
                for n in 0..g.n {
                    let base = (n * g.c + c) * g.h * g.w;
                    for oy in 0..g.ho {
                        let Some(iy) = g.src(oy, ki, g.h) else {
                            continue;
                        };
                        let src = &src_row[n * p + oy * g.wo..n * p + (oy + 1) * g.wo];
                        for (ox, s) in src.iter().enumerate() {
                            if let Some(ix) = g.src(ox, kj, g.w) {
                                dx[base + iy * g.w + ix] += s;
                            }
                        }
                    }
                }
            }
        }
    }
    dx
}

/// `[O, N*P]` -> `[N, O, P]`.
fn unfold_batch(m: &[f64], o: usize, n: usize, p: usize) -> Vec<f64> {
    let mut out = vec![0.0; o * n * p];
    for oc in 0..o {
        for b in 0..n {
            out[(b * o + oc) * p..(b * o + oc + 1) * p]
                .copy_from_slice(&m[oc * n * p + b * p..oc * n * p + (b + 1) * p]);
        }
    }
    out
}

/// `[N, O, P]` -> `[O, N*P]`.
fn fold_batch(x: &[f64], o: usize, n: usize, p: usize) -> Vec<f64> {
    let mut out = vec![0.0; o * n * p];
    for b in 0..n {
        for oc in 0..o {
            out[oc * n * p + b * p..oc * n * p + (b + 1) * p]
                .copy_from_slice(&x[(b * o + oc) * p..(b * o + oc + 1) * p]);
        }
    }
    out
}

struct Conv2d {
    geom: Geometry,
    out_channels: usize,
    has_bias: bool,
}

impl Function for Conv2d {
    fn name(&self) -> &'static str {
        "conv2d"
    }

    fn backward(&self, x: &[&Tensor], y: &Tensor, g: &Tensor) -> Result<Vec<Option<Tensor>>> {
        self.backward_masked(x, y, g, &[true, true, true])
    }

    fn backward_masked(
        &self,
        x: &[&Tensor],
        _: &Tensor,
        g: &Tensor,
        needs: &[bool],
    ) -> Result<Vec<Option<Tensor>>> {
        let geom = &self.geom;
        let (o, p) = (self.out_channels, geom.ho * geom.wo);
        let g_mat = fold_batch(g.data(), o, geom.n, p);
        let cols = im2col(x[0].data(), geom);

        let mut dw = vec![0.0; o * geom.rows()];
        gemm(
            1.0,
            MatRef::new(&g_mat, o, geom.cols()),
            MatRef::new(&cols, geom.rows(), geom.cols()).t(),
            0.0,
            &mut dw,
        );
        let dx = if needs[0] {
            let mut dcols = vec![0.0; geom.rows() * geom.cols()];
            gemm(
                1.0,
                MatRef::new(x[1].data(), o, geom.rows()).t(),
                MatRef::new(&g_mat, o, geom.cols()),
                0.0,
                &mut dcols,
            );
            Some(Tensor::new(x[0].shape().to_vec(), col2im(&dcols, geom))?)
        } else {
            None
        };
        let mut grads = vec![dx, Some(Tensor::new(x[1].shape().to_vec(), dw)?)];
        if self.has_bias {
            let db = g_mat
                .chunks(geom.cols())
                .map(|row| row.iter().sum())
                .collect();
            grads.push(Some(Tensor::new([o], db)?));
        }
        Ok(grads)
    }
}

impl<'t> Var<'t> {
    /// NCHW convolution with an `O×I×Kh×Kw` kernel and optional `O` bias.
    pub fn conv2d(
        self,
        weight: Var<'t>,
        bias: Option<Var<'t>>,
        opts: Conv2dOptions,
    ) -> Result<Var<'t>> {
        let (x, w) = (self.value(), weight.value());
        if x.ndim() != 4 || w.ndim() != 4 {
            return Err(Error::shape(
                "conv2d",
                format!("input {:?}, weight {:?}", x.shape(), w.shape()),
            ));
        }
        let (n, c, h, wd) = (x.dim(0), x.dim(1), x.dim(2), x.dim(3));
        let (o, ic, kh, kw) = (w.dim(0), w.dim(1), w.dim(2), w.dim(3));
        if ic != c {
            return Err(Error::shape(
                "conv2d",
                format!("weight expects {ic} input channels, input has {c}"),
            ));
        }
        if let Some(b) = bias {
            let bv = b.value();
            if bv.shape() != [o] {
                return Err(Error::shape(
                    "conv2d",
                    format!("bias {:?} for {o} outputs", bv.shape()),
                ));
            }
        }
        let geom = Geometry {
            n,
            c,
            h,
            w: wd,
            kh,
            kw,
            ho: conv_output_size(h, kh, opts)?,
            wo: conv_output_size(wd, kw, opts)?,
            opts,
        };
        let cols = im2col(x.data(), &geom);
        let mut out_mat = vec![0.0; o * geom.cols()];
        gemm(
            1.0,
            MatRef::new(w.data(), o, geom.rows()),
            MatRef::new(&cols, geom.rows(), geom.cols()),
            0.0,
            &mut out_mat,
        );
        if let Some(b) = bias {
            let bv = b.value();
            for (row, &bias) in out_mat.chunks_mut(geom.cols()).zip(bv.data()) {
                for v in row {
                    *v += bias;
                }
            }
        }
        let out = unfold_batch(&out_mat, o, n, geom.ho * geom.wo);
        let out = Tensor::new([n, o, geom.ho, geom.wo], out)?;
        let mut inputs = vec![self, weight];
        inputs.extend(bias);
        self.tape().record(
            &inputs,
            out,
            Conv2d {
                geom,
                out_channels: o,
                has_bias: bias.is_some(),
            },
        )
    }
}
