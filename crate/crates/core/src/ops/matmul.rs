use crate::autograd::{Function, Var};
use crate::error::{Error, Result};
use crate::gemm::{gemm, MatRef};
use crate::tensor::Tensor;

struct Matmul {
    batch: usize,
    m: usize,
    k: usize,
    n: usize,
}

impl Function for Matmul {
    fn name(&self) -> &'static str {
        "matmul"
    }

    fn backward(&self, x: &[&Tensor], _: &Tensor, g: &Tensor) -> Result<Vec<Option<Tensor>>> {
        let Matmul { batch, m, k, n } = *self;
        let (a, b, gd) = (x[0].data(), x[1].data(), g.data());
        let mut da = vec![0.0; a.len()];
        let mut db = vec![0.0; b.len()];
        for i in 0..batch {
            let ga = MatRef::new(&gd[i * m * n..(i + 1) * m * n], m, n);
            let av = MatRef::new(&a[i * m * k..(i + 1) * m * k], m, k);
            let bv = MatRef::new(&b[i * k * n..(i + 1) * k * n], k, n);
            gemm(1.0, ga, bv.t(), 0.0, &mut da[i * m * k..(i + 1) * m * k]);
            gemm(1.0, av.t(), ga, 0.0, &mut db[i * k * n..(i + 1) * k * n]);
        }
        Ok(vec![
            Some(Tensor::new(x[0].shape().to_vec(), da)?),
            Some(Tensor::new(x[1].shape().to_vec(), db)?),
        ])
    }
}

impl<'t> Var<'t> {
    /// Batched matrix product `[..., M, K] x [..., K, N] -> [..., M, N]`.
    ///
    /// Leading batch dims must match exactly.
    pub fn matmul(self, other: Var<'t>) -> Result<Var<'t>> {
        let (a, b) = (self.value(), other.value());
        let (sa, sb) = (a.shape(), b.shape());
        if sa.len() < 2 || sa.len() != sb.len() || sa[..sa.len() - 2] != sb[..sb.len() - 2] {
            return Err(Error::shape("matmul", format!("{sa:?} x {sb:?}")));
        }
        let nd = sa.len();
        let (m, k, k2, n) = (sa[nd - 2], sa[nd - 1], sb[nd - 2], sb[nd - 1]);
        if k != k2 {
            return Err(Error::shape("matmul", format!("inner dims {k} vs {k2}")));
        }
        let batch: usize = sa[..nd - 2].iter().product();
        let mut out = vec![0.0; batch * m * n];
        for i in 0..batch {
            gemm(
                1.0,
                MatRef::new(&a.data()[i * m * k..(i + 1) * m * k], m, k),
                MatRef::new(&b.data()[i * k * n..(i + 1) * k * n], k, n),
                0.0,
                &mut out[i * m * n..(i + 1) * m * n],
            );
        }
        let mut shape = sa[..nd - 2].to_vec();
        shape.extend([m, n]);
        let out = Tensor::new(shape, out)?;
        self.tape()
            .record(&[self, other], out, Matmul { batch, m, k, n })
    }
}
