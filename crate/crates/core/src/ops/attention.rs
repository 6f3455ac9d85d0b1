//! Scaled dot-product attention computed in query-row blocks.
//!
//! The full `L × L` weight matrix is never materialized; backward recomputes
//! each block of weights from `q` and `k`. Memory stays `O(BLOCK · L)` which
//! matters for the stride-8 level of a 640 px tile (6400 tokens).

use crate::autograd::{Function, Var};
use crate::error::{Error, Result};
use crate::gemm::{gemm, MatRef};
use crate::tensor::Tensor;

const BLOCK: usize = 128;

#[derive(Clone, Copy)]
struct Dims {
    batch: usize,
    len: usize,
    dim: usize,
}

impl Dims {
    fn of(op: &'static str, q: &Tensor, k: &Tensor, v: &Tensor) -> Result<Self> {
        let s = q.shape();
        if s.len() < 2 || k.shape() != s || v.shape() != s {
            return Err(Error::shape(
                op,
                format!("q {:?}, k {:?}, v {:?}", s, k.shape(), v.shape()),
            ));
        }
        let (len, dim) = (s[s.len() - 2], s[s.len() - 1]);
        if len == 0 || dim == 0 {
            return Err(Error::InvalidInput(format!("{op}: empty sequence {s:?}")));
        }
        Ok(Dims {
            batch: s[..s.len() - 2].iter().product(),
            len,
            dim,
        })
    }

    fn scale(&self) -> f64 {
        1.0 / (self.dim as f64).sqrt()
    }

    fn slab<'a>(&self, data: &'a [f64], b: usize) -> &'a [f64] {
        let n = self.len * self.dim;
        &data[b * n..(b + 1) * n]
    }
}

/// Writes softmax(scale · q_rows kᵀ) for rows `r0..r1` into `p`.
fn weights_block(d: Dims, q: &[f64], k: &[f64], r0: usize, r1: usize, p: &mut [f64]) {
    let rows = r1 - r0;
    gemm(
        d.scale(),
        MatRef::new(&q[r0 * d.dim..r1 * d.dim], rows, d.dim),
        MatRef::new(k, d.len, d.dim).t(),
        0.0,
        &mut p[..rows * d.len],
    );
    for row in p[..rows * d.len].chunks_mut(d.len) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            total += *v;
        }
        for v in row.iter_mut() {
            *v /= total;
        }
    }
}

struct Attention {
    dims: Dims,
}

impl Function for Attention {
    fn name(&self) -> &'static str {
        "attention"
    }

    fn backward(&self, x: &[&Tensor], out: &Tensor, g: &Tensor) -> Result<Vec<Option<Tensor>>> {
        let d = self.dims;
        let (q, k, v) = (x[0].data(), x[1].data(), x[2].data());
        let mut dq = vec![0.0; q.len()];
        let mut dk = vec![0.0; k.len()];
        let mut dv = vec![0.0; v.len()];
        let mut p = vec![0.0; BLOCK * d.len];
        let mut dp = vec![0.0; BLOCK * d.len];
        let n = d.len * d.dim;
        for b in 0..d.batch {
            let (qb, kb, vb) = (d.slab(q, b), d.slab(k, b), d.slab(v, b));
            let (ob, gb) = (d.slab(out.data(), b), d.slab(g.data(), b));
            let range = b * n..(b + 1) * n;
            for r0 in (0..d.len).step_by(BLOCK) {
                let r1 = (r0 + BLOCK).min(d.len);
                let rows = r1 - r0;
                weights_block(d, qb, kb, r0, r1, &mut p);
                let p_blk = MatRef::new(&p[..rows * d.len], rows, d.len);
                let g_blk = MatRef::new(&gb[r0 * d.dim..r1 * d.dim], rows, d.dim);
                gemm(1.0, p_blk.t(), g_blk, 1.0, &mut dv[range.clone()]);
                gemm(
                    1.0,
                    g_blk,
                    MatRef::new(vb, d.len, d.dim).t(),
                    0.0,
                    &mut dp[..rows * d.len],
                );
                // Softmax backward: dS = P ⊙ (dP − <dO, O>) per row.
                for r in 0..rows {
                    let i = r0 + r;
                    let dot: f64 = (0..d.dim)
                        .map(|c| gb[i * d.dim + c] * ob[i * d.dim + c])
                        .sum();
                    let row = r * d.len..(r + 1) * d.len;
                    for (s, &pv) in dp[row.clone()].iter_mut().zip(&p[row]) {
                        *s = pv * (*s - dot);
                    }
                }
                let ds = MatRef::new(&dp[..rows * d.len], rows, d.len);
                gemm(
                    d.scale(),
                    ds,
                    MatRef::new(kb, d.len, d.dim),
                    0.0,
                    &mut dq[b * n + r0 * d.dim..b * n + r1 * d.dim],
                );
                gemm(
                    d.scale(),
                    ds.t(),
                    MatRef::new(&qb[r0 * d.dim..r1 * d.dim], rows, d.dim),
                    1.0,
                    &mut dk[range.clone()],
                );
            }
        }
        let shape = x[0].shape().to_vec();
        Ok(vec![
            Some(Tensor::new(shape.clone(), dq)?),
            Some(Tensor::new(shape.clone(), dk)?),
            Some(Tensor::new(shape, dv)?),
        ])
    }
}

/// Attention weights `softmax(q kᵀ / √d)` as a dense `[..., L, L]` tensor.
///
/// Intended for inspection on small maps; the differentiable op never
/// stores this matrix.
pub fn attention_weights(q: &Tensor, k: &Tensor) -> Result<Tensor> {
    let d = Dims::of("attention_weights", q, k, k)?;
    let mut out = vec![0.0; d.batch * d.len * d.len];
    for b in 0..d.batch {
        let slab = &mut out[b * d.len * d.len..(b + 1) * d.len * d.len];
        weights_block(d, d.slab(q.data(), b), d.slab(k.data(), b), 0, d.len, slab);
    }
    let mut shape = q.shape().to_vec();
    let last = shape.len() - 1;
    shape[last] = d.len;
    Tensor::new(shape, out)
}

impl<'t> Var<'t> {
    /// `softmax(q kᵀ / √d) v` over `[..., L, d]` inputs of identical shape.
    pub fn attention(self, k: Var<'t>, v: Var<'t>) -> Result<Var<'t>> {
        let (qt, kt, vt) = (self.value(), k.value(), v.value());
        let d = Dims::of("attention", &qt, &kt, &vt)?;
        let mut out = vec![0.0; qt.numel()];
        let mut p = vec![0.0; BLOCK * d.len];
        let n = d.len * d.dim;
        for b in 0..d.batch {
            let (qb, kb, vb) = (
                d.slab(qt.data(), b),
                d.slab(kt.data(), b),
                d.slab(vt.data(), b),
            );
            for r0 in (0..d.len).step_by(BLOCK) {
                let r1 = (r0 + BLOCK).min(d.len);
                weights_block(d, qb, kb, r0, r1, &mut p);
                gemm(
                    1.0,
                    MatRef::new(&p[..(r1 - r0) * d.len], r1 - r0, d.len),
                    MatRef::new(vb, d.len, d.dim),
                    0.0,
                    &mut out[b * n + r0 * d.dim..b * n + r1 * d.dim],
                );
            }
        }
        let out = Tensor::new(qt.shape().to_vec(), out)?;
        self.tape()
            .record(&[self, k, v], out, Attention { dims: d })
    }
}
