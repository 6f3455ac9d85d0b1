use crate::autograd::{Function, Var};
use crate::error::{Error, Result};
use crate::tensor::{strides_of, Tensor};

use super::axis_split;

/// Reorders axes so that output axis `i` is input axis `perm[i]`.
pub(crate) fn permute_data(x: &Tensor, perm: &[usize]) -> Tensor {
    let in_shape = x.shape();
    let in_strides = strides_of(in_shape);
    let out_shape: Vec<usize> = perm.iter().map(|&p| in_shape[p]).collect();
    let src_strides: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
    let n = x.numel();
    let mut out = Vec::with_capacity(n);
    let nd = out_shape.len();
    if n == 0 {
        return Tensor::new(out_shape, out).expect("empty");
    }
    let xd = x.data();
    // Innermost axis handled as a strided run; outer axes via an odometer.
    let last_len = out_shape[nd - 1];
    let last_stride = src_strides[nd - 1];
    let mut idx = vec![0usize; nd.saturating_sub(1)];
    let mut base = 0usize;
    loop {
        for k in 0..last_len {
            out.push(xd[base + k * last_stride]);
        }
        let mut ax = nd - 1;
        loop {
            if ax == 0 {
                return Tensor::new(out_shape, out).expect("permute keeps size");
            }
            ax -= 1;
            idx[ax] += 1;
            base += src_strides[ax];
            if idx[ax] < out_shape[ax] {
                break;
            }
            base -= src_strides[ax] * out_shape[ax];
            idx[ax] = 0;
        }
    }
}

fn inverse(perm: &[usize]) -> Vec<usize> {
    let mut inv = vec![0; perm.len()];
    for (i, &p) in perm.iter().enumerate() {
        inv[p] = i;
    }
    inv
}

struct Reshape;
impl Function for Reshape {
    fn name(&self) -> &'static str {
        "reshape"
    }
    fn backward(&self, x: &[&Tensor], _: &Tensor, g: &Tensor) -> Result<Vec<Option<Tensor>>> {
        Ok(vec![Some(g.clone().reshape(x[0].shape().to_vec())?)])
    }
}

struct Permute {
    perm: Vec<usize>,
}
impl Function for Permute {
    fn name(&self) -> &'static str {
        "permute"
    }
    fn backward(&self, _: &[&Tensor], _: &Tensor, g: &Tensor) -> Result<Vec<Option<Tensor>>> {
        Ok(vec![Some(permute_data(g, &inverse(&self.perm)))])
    }
}

struct Narrow {
    axis: usize,
    start: usize,
}
impl Function for Narrow {
    fn name(&self) -> &'static str {
        "narrow"
    }
    fn backward(&self, x: &[&Tensor], _: &Tensor, g: &Tensor) -> Result<Vec<Option<Tensor>>> {
        let (outer, len, inner) = axis_split(x[0].shape(), self.axis);
        let glen = g.dim(self.axis);
        let mut dx = vec![0.0; x[0].numel()];
        let gd = g.data();
        for o in 0..outer {
            let src = o * glen * inner;
            let dst = (o * len + self.start) * inner;
            dx[dst..dst + glen * inner].copy_from_slice(&gd[src..src + glen * inner]);
        }
        Ok(vec![Some(Tensor::new(x[0].shape().to_vec(), dx)?)])
    }
}

struct Expand {
    axis: usize,
}
impl Function for Expand {
    fn name(&self) -> &'static str {
        "expand"
    }
    fn backward(&self, x: &[&Tensor], _: &Tensor, g: &Tensor) -> Result<Vec<Option<Tensor>>> {
        let (outer, reps, inner) = axis_split(g.shape(), self.axis);
        let gd = g.data();
        let mut dx = vec![0.0; outer * inner];
        for o in 0..outer {
            for r in 0..reps {
                let src = (o * reps + r) * inner;
                for (d, s) in dx[o * inner..(o + 1) * inner]
                    .iter_mut()
                    .zip(&gd[src..src + inner])
                {
                    *d += s;
                }
            }
        }
        Ok(vec![Some(Tensor::new(x[0].shape().to_vec(), dx)?)])
    }
}

struct Concat {
    axis: usize,
}
impl Function for Concat {
    fn name(&self) -> &'static str {
        "concat"
    }
    fn backward(&self, xs: &[&Tensor], _: &Tensor, g: &Tensor) -> Result<Vec<Option<Tensor>>> {
        let (outer, total, inner) = axis_split(g.shape(), self.axis);
        let gd = g.data();
        let mut offset = 0;
        let mut grads = Vec::with_capacity(xs.len());
        for x in xs {
            let len = x.dim(self.axis);
            let mut dx = Vec::with_capacity(x.numel());
            for o in 0..outer {
                let src = (o * total + offset) * inner;
                dx.extend_from_slice(&gd[src..src + len * inner]);
            }
            offset += len;
            grads.push(Some(Tensor::new(x.shape().to_vec(), dx)?));
        }
        Ok(grads)
    }
}

impl<'t> Var<'t> {
    pub fn reshape(self, shape: impl Into<Vec<usize>>) -> Result<Var<'t>> {
        let out = (*self.value()).clone().reshape(shape)?;
        self.tape().record(&[self], out, Reshape)
    }

    /// General axis permutation; output axis `i` is input axis `perm[i]`.
    pub fn permute(self, perm: &[usize]) -> Result<Var<'t>> {
        let x = self.value();
        let mut seen = vec![false; x.ndim()];
        let valid = perm.len() == x.ndim()
            && perm
                .iter()
                .all(|&p| p < seen.len() && !std::mem::replace(&mut seen[p], true));
        if !valid {
            return Err(Error::shape(
                "permute",
                format!("{perm:?} for shape {:?}", x.shape()),
            ));
        }
        let out = permute_data(&x, perm);
        self.tape().record(
            &[self],
            out,
            Permute {
                perm: perm.to_vec(),
            },
        )
    }

    /// Slice `len` entries along `axis` starting at `start`.
    pub fn narrow(self, axis: usize, start: usize, len: usize) -> Result<Var<'t>> {
        let x = self.value();
        if axis >= x.ndim() || start + len > x.dim(axis) {
            return Err(Error::shape(
                "narrow",
                format!(
                    "[{start}, {}) on axis {axis} of {:?}",
                    start + len,
                    x.shape()
                ),
            ));
        }
        let (outer, full, inner) = axis_split(x.shape(), axis);
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let src = (o * full + start) * inner;
            out.extend_from_slice(&x.data()[src..src + len * inner]);
        }
        let mut shape = x.shape().to_vec();
        shape[axis] = len;
        let out = Tensor::new(shape, out)?;
        self.tape().record(&[self], out, Narrow { axis, start })
    }

    /// Repeats a size-1 axis `n` times. This is the explicit form of
    /// broadcasting; no other op broadcasts implicitly.
    pub fn expand(self, axis: usize, n: usize) -> Result<Var<'t>> {
        let x = self.value();
        if axis >= x.ndim() || x.dim(axis) != 1 {
            return Err(Error::shape(
                "expand",
                format!("axis {axis} of {:?} is not 1", x.shape()),
            ));
        }
        let (outer, _, inner) = axis_split(x.shape(), axis);
        let mut out = Vec::with_capacity(outer * n * inner);
        for o in 0..outer {
            let row = &x.data()[o * inner..(o + 1) * inner];
            for _ in 0..n {
                out.extend_from_slice(row);
            }
        }
        let mut shape = x.shape().to_vec();
        shape[axis] = n;
        let out = Tensor::new(shape, out)?;
        self.tape().record(&[self], out, Expand { axis })
    }

    /// Concatenates along `axis`; all other dims must agree.
    pub fn concat(vars: &[Var<'t>], axis: usize) -> Result<Var<'t>> {
        let first = vars
            .first()
            .ok_or_else(|| Error::shape("concat", "no inputs"))?;
        let values: Vec<_> = vars.iter().map(|v| v.value()).collect();
        let ref_shape = values[0].shape().to_vec();
        if axis >= ref_shape.len() {
            return Err(Error::shape(
                "concat",
                format!("axis {axis} for {ref_shape:?}"),
            ));
        }
        let mut total = 0;
        for v in &values {
            let s = v.shape();
            let compatible = s.len() == ref_shape.len()
                && s.iter()
                    .zip(&ref_shape)
                    .enumerate()
                    .all(|(i, (a, b))| i == axis || a == b);
            if !compatible {
                return Err(Error::shape("concat", format!("{:?} vs {ref_shape:?}", s)));
            }
            total += s[axis];
        }
        let (outer, _, inner) = axis_split(&ref_shape, axis);
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for v in &values {
                let len = v.dim(axis);
                out.extend_from_slice(&v.data()[o * len * inner..(o + 1) * len * inner]);
            }
        }
        let mut shape = ref_shape;
        shape[axis] = total;
        let out = Tensor::new(shape, out)?;
        first.tape().record(vars, out, Concat { axis })
    }
}
