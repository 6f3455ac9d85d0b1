use crate::autograd::{Function, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

struct MaxPool {
    /// Flat input index of each output's maximum.
    argmax: Vec<usize>,
}

impl Function for MaxPool {
    fn name(&self) -> &'static str {
        "max_pool2d"
    }
    fn backward(&self, x: &[&Tensor], _: &Tensor, g: &Tensor) -> Result<Vec<Option<Tensor>>> {
        let mut dx = vec![0.0; x[0].numel()];
        for (&src, &gv) in self.argmax.iter().zip(g.data()) {
            dx[src] += gv;
        }
        Ok(vec![Some(Tensor::new(x[0].shape().to_vec(), dx)?)])
    }
}

struct GlobalAvgPool;

impl Function for GlobalAvgPool {
    fn name(&self) -> &'static str {
        "global_avg_pool"
    }
    fn backward(&self, x: &[&Tensor], _: &Tensor, g: &Tensor) -> Result<Vec<Option<Tensor>>> {
        let s = x[0].shape();
        let plane = s[2] * s[3];
        let mut dx = Vec::with_capacity(x[0].numel());
        for &gv in g.data() {
            dx.extend(std::iter::repeat_n(gv / plane as f64, plane));
        }
        Ok(vec![Some(Tensor::new(s.to_vec(), dx)?)])
    }
}

struct Upsample {
    fy: usize,
    fx: usize,
}

impl Function for Upsample {
    fn name(&self) -> &'static str {
        "nearest_upsample"
    }
    fn backward(&self, x: &[&Tensor], _: &Tensor, g: &Tensor) -> Result<Vec<Option<Tensor>>> {
        let s = x[0].shape();
        let (h, w) = (s[2], s[3]);
        let (oh, ow) = (h * self.fy, w * self.fx);
        let gd = g.data();
        let mut dx = vec![0.0; x[0].numel()];
        for (plane_idx, dplane) in dx.chunks_mut(h * w).enumerate() {
            let gplane = &gd[plane_idx * oh * ow..(plane_idx + 1) * oh * ow];
            for oy in 0..oh {
                for ox in 0..ow {
                    dplane[(oy / self.fy) * w + ox / self.fx] += gplane[oy * ow + ox];
                }
            }
        }
        Ok(vec![Some(Tensor::new(s.to_vec(), dx)?)])
    }
}

fn expect_nchw(op: &'static str, x: &Tensor) -> Result<()> {
    if x.ndim() != 4 {
        return Err(Error::shape(
            op,
            format!("expected NCHW, got {:?}", x.shape()),
        ));
    }
    Ok(())
}

impl<'t> Var<'t> {
    /// Max pooling with a square `kernel`; padded cells never win.
    pub fn max_pool2d(self, kernel: usize, stride: usize, padding: usize) -> Result<Var<'t>> {
        let x = self.value();
        expect_nchw("max_pool2d", &x)?;
        if kernel == 0 || stride == 0 || padding >= kernel {
            return Err(Error::Config(format!(
                "max_pool2d kernel {kernel}, stride {stride}, padding {padding}"
            )));
        }
        let (n, c, h, w) = (x.dim(0), x.dim(1), x.dim(2), x.dim(3));
        if h + 2 * padding < kernel || w + 2 * padding < kernel {
            return Err(Error::Config(format!(
                "max_pool2d window {kernel} exceeds {h}x{w}"
            )));
        }
        let ho = (h + 2 * padding - kernel) / stride + 1;
        let wo = (w + 2 * padding - kernel) / stride + 1;
        let xd = x.data();
        let mut out = Vec::with_capacity(n * c * ho * wo);
        let mut argmax = Vec::with_capacity(n * c * ho * wo);
        for plane in 0..n * c {
            let base = plane * h * w;
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut best = (f64::NEG_INFINITY, usize::MAX);
                    for ky in 0..kernel {
                        let iy = (oy * stride + ky) as isize - padding as isize;
                        if iy < 0 || iy as usize >= h {
                            continue;
                        }
                        for kx in 0..kernel {
                            let ix = (ox * stride + kx) as isize - padding as isize;
                            if ix < 0 || ix as usize >= w {
                                continue;
                            }
                            let idx = base + iy as usize * w + ix as usize;
                            if xd[idx] > best.0 {
                                best = (xd[idx], idx);
                            }
                        }
                    }
                    out.push(best.0);
                    argmax.push(best.1);
                }
            }
        }
        let out = Tensor::new([n, c, ho, wo], out)?;
        self.tape().record(&[self], out, MaxPool { argmax })
    }

    /// Mean over the spatial dims: `N×C×H×W -> N×C×1×1`.
    pub fn global_avg_pool(self) -> Result<Var<'t>> {
        let x = self.value();
        expect_nchw("global_avg_pool", &x)?;
        let (n, c, plane) = (x.dim(0), x.dim(1), x.dim(2) * x.dim(3));
        if plane == 0 {
            return Err(Error::shape("global_avg_pool", "empty spatial extent"));
        }
        let out = x
            .data()
            .chunks(plane)
            .map(|p| p.iter().sum::<f64>() / plane as f64)
            .collect();
        let out = Tensor::new([n, c, 1, 1], out)?;
        self.tape().record(&[self], out, GlobalAvgPool)
    }

    /// Nearest-neighbour upsampling by integer factors per axis.
    pub fn nearest_upsample(self, fy: usize, fx: usize) -> Result<Var<'t>> {
        let x = self.value();
        expect_nchw("nearest_upsample", &x)?;
        if fy < 1 || fx < 1 {
            return Err(Error::Config(format!(
                "upsample factor must be >= 1, got {fy}x{fx}"
            )));
        }
        let (n, c, h, w) = (x.dim(0), x.dim(1), x.dim(2), x.dim(3));
        let (oh, ow) = (h * fy, w * fx);
        let mut out = Vec::with_capacity(n * c * oh * ow);
        for plane in x.data().chunks(h * w) {
            for oy in 0..oh {
                let row = &plane[(oy / fy) * w..(oy / fy + 1) * w];
                for ox in 0..ow {
                    out.push(row[ox / fx]);
                }
            }
        }
        let out = Tensor::new([n, c, oh, ow], out)?;
        self.tape().record(&[self], out, Upsample { fy, fx })
    }
}
