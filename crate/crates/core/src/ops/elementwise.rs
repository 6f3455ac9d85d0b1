use crate::autograd::{Function, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

use super::axis_split;

fn same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(
            op,
            format!("{:?} vs {:?}", a.shape(), b.shape()),
        ));
    }
    Ok(())
}

fn zip_map(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    Tensor::new(
        a.shape().to_vec(),
        a.data()
            .iter()
            .zip(b.data())
            .map(|(&x, &y)| f(x, y))
            .collect(),
    )
    .expect("same shape")
}

struct Add;
impl Function for Add {
    fn name(&self) -> &'static str {
        "add"
    }
    fn backward(&self, _: &[&Tensor], _: &Tensor, g: &Tensor) -> Result<Vec<Option<Tensor>>> {
        Ok(vec![Some(g.clone()), Some(g.clone())])
    }
}

struct Sub;
impl Function for Sub {
    fn name(&self) -> &'static str {
        "sub"
    }
    fn backward(&self, _: &[&Tensor], _: &Tensor, g: &Tensor) -> Result<Vec<Option<Tensor>>> {
        Ok(vec![Some(g.clone()), Some(g.map(|v| -v))])
    }
}

struct Mul;
impl Function for Mul {
    fn name(&self) -> &'static str {
        "mul"
    }
    fn backward(&self, x: &[&Tensor], _: &Tensor, g: &Tensor) -> Result<Vec<Option<Tensor>>> {
        Ok(vec![
            Some(zip_map(g, x[1], |g, b| g * b)),
            Some(zip_map(g, x[0], |g, a| g * a)),
        ])
    }
}

struct Scale(f64);
impl Function for Scale {
    fn name(&self) -> &'static str {
        "scale"
    }
    fn backward(&self, _: &[&Tensor], _: &Tensor, g: &Tensor) -> Result<Vec<Option<Tensor>>> {
        let s = self.0;
        Ok(vec![Some(g.map(|v| v * s))])
    }
}

struct MulScalarVar;
impl Function for MulScalarVar {
    fn name(&self) -> &'static str {
        "mul_scalar"
    }
    fn backward(&self, x: &[&Tensor], _: &Tensor, g: &Tensor) -> Result<Vec<Option<Tensor>>> {
        let s = x[1].data()[0];
        let ds: f64 = g.data().iter().zip(x[0].data()).map(|(g, x)| g * x).sum();
        Ok(vec![Some(g.map(|v| v * s)), Some(Tensor::scalar(ds))])
    }
}

struct Relu;
impl Function for Relu {
    fn name(&self) -> &'static str {
        "relu"
    }
    fn backward(&self, x: &[&Tensor], _: &Tensor, g: &Tensor) -> Result<Vec<Option<Tensor>>> {
        Ok(vec![Some(zip_map(
            g,
            x[0],
            |g, x| if x > 0.0 { g } else { 0.0 },
        ))])
    }
}

struct Sigmoid;
impl Function for Sigmoid {
    fn name(&self) -> &'static str {
        "sigmoid"
    }
    fn backward(&self, _: &[&Tensor], y: &Tensor, g: &Tensor) -> Result<Vec<Option<Tensor>>> {
        Ok(vec![Some(zip_map(g, y, |g, y| g * y * (1.0 - y)))])
    }
}

struct Exp;
impl Function for Exp {
    fn name(&self) -> &'static str {
        "exp"
    }
    fn backward(&self, _: &[&Tensor], y: &Tensor, g: &Tensor) -> Result<Vec<Option<Tensor>>> {
        Ok(vec![Some(zip_map(g, y, |g, y| g * y))])
    }
}

struct Sum;
impl Function for Sum {
    fn name(&self) -> &'static str {
        "sum"
    }
    fn backward(&self, x: &[&Tensor], _: &Tensor, g: &Tensor) -> Result<Vec<Option<Tensor>>> {
        Ok(vec![Some(Tensor::full(x[0].shape().to_vec(), g.data()[0]))])
    }
}

struct Softmax {
    axis: usize,
}
impl Function for Softmax {
    fn name(&self) -> &'static str {
        "softmax"
    }
    fn backward(&self, _: &[&Tensor], y: &Tensor, g: &Tensor) -> Result<Vec<Option<Tensor>>> {
        let (outer, len, inner) = axis_split(y.shape(), self.axis);
        let (yd, gd) = (y.data(), g.data());
        let mut dx = vec![0.0; yd.len()];
        for o in 0..outer {
            for i in 0..inner {
                let base = o * len * inner + i;
                let dot: f64 = (0..len)
                    .map(|k| yd[base + k * inner] * gd[base + k * inner])
                    .sum();
                for k in 0..len {
                    let idx = base + k * inner;
                    dx[idx] = yd[idx] * (gd[idx] - dot);
                }
            }
        }
        Ok(vec![Some(Tensor::new(y.shape().to_vec(), dx)?)])
    }
}

struct BiasAdd {
    axis: usize,
}
impl Function for BiasAdd {
    fn name(&self) -> &'static str {
        "bias_add"
    }
    fn backward(&self, x: &[&Tensor], _: &Tensor, g: &Tensor) -> Result<Vec<Option<Tensor>>> {
        let (outer, len, inner) = axis_split(g.shape(), self.axis);
        let mut db = vec![0.0; len];
        let gd = g.data();
        for o in 0..outer {
            for (c, acc) in db.iter_mut().enumerate() {
                let base = (o * len + c) * inner;
                *acc += gd[base..base + inner].iter().sum::<f64>();
            }
        }
        Ok(vec![
            Some(g.clone()),
            Some(Tensor::new(x[1].shape().to_vec(), db)?),
        ])
    }
}

pub(crate) fn sigmoid_scalar(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Softmax of raw data along `axis`.
pub(crate) fn softmax_data(x: &Tensor, axis: usize) -> Tensor {
    let (outer, len, inner) = axis_split(x.shape(), axis);
    let xd = x.data();
    let mut y = vec![0.0; xd.len()];
    for o in 0..outer {
        for i in 0..inner {
            let base = o * len * inner + i;
            let max = (0..len)
                .map(|k| xd[base + k * inner])
                .fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for k in 0..len {
                let e = (xd[base + k * inner] - max).exp();
                y[base + k * inner] = e;
                total += e;
            }
            for k in 0..len {
                y[base + k * inner] /= total;
            }
        }
    }
    Tensor::new(x.shape().to_vec(), y).expect("same shape")
}

impl<'t> Var<'t> {
    pub fn add(self, other: Var<'t>) -> Result<Var<'t>> {
        let (a, b) = (self.value(), other.value());
        same_shape("add", &a, &b)?;
        self.tape()
            .record(&[self, other], zip_map(&a, &b, |x, y| x + y), Add)
    }

    pub fn sub(self, other: Var<'t>) -> Result<Var<'t>> {
        let (a, b) = (self.value(), other.value());
        same_shape("sub", &a, &b)?;
        self.tape()
            .record(&[self, other], zip_map(&a, &b, |x, y| x - y), Sub)
    }

    /// Elementwise product.
    pub fn mul(self, other: Var<'t>) -> Result<Var<'t>> {
        let (a, b) = (self.value(), other.value());
        same_shape("mul", &a, &b)?;
        self.tape()
            .record(&[self, other], zip_map(&a, &b, |x, y| x * y), Mul)
    }

    /// Multiplication by a constant.
    pub fn scale(self, s: f64) -> Result<Var<'t>> {
        let out = self.value().map(|v| v * s);
        self.tape().record(&[self], out, Scale(s))
    }

    /// Multiplication by a one-element variable (e.g. a learnable scale).
    pub fn mul_scalar(self, s: Var<'t>) -> Result<Var<'t>> {
        let sv = s.value();
        if sv.numel() != 1 {
            return Err(Error::shape(
                "mul_scalar",
                format!("scalar operand has shape {:?}", sv.shape()),
            ));
        }
        let k = sv.data()[0];
        let out = self.value().map(|v| v * k);
        self.tape().record(&[self, s], out, MulScalarVar)
    }

    pub fn relu(self) -> Result<Var<'t>> {
        let out = self.value().map(|v| v.max(0.0));
        self.tape().record(&[self], out, Relu)
    }

    pub fn sigmoid(self) -> Result<Var<'t>> {
        let out = self.value().map(sigmoid_scalar);
        self.tape().record(&[self], out, Sigmoid)
    }

    pub fn exp(self) -> Result<Var<'t>> {
        let out = self.value().map(f64::exp);
        self.tape().record(&[self], out, Exp)
    }

    /// Sum of all elements, as a one-element tensor.
    pub fn sum(self) -> Result<Var<'t>> {
        let out = Tensor::scalar(self.value().sum());
        self.tape().record(&[self], out, Sum)
    }

    pub fn mean(self) -> Result<Var<'t>> {
        let n = self.value().numel();
        if n == 0 {
            return Err(Error::shape("mean", "empty tensor"));
        }
        self.sum()?.scale(1.0 / n as f64)
    }

    pub fn softmax(self, axis: usize) -> Result<Var<'t>> {
        let x = self.value();
        if axis >= x.ndim() {
            return Err(Error::shape(
                "softmax",
                format!("axis {axis} for shape {:?}", x.shape()),
            ));
        }
        self.tape()
            .record(&[self], softmax_data(&x, axis), Softmax { axis })
    }

    /// Adds `bias[c]` to every element whose index along `axis` is `c`.
    ///
    /// The only broadcasting operation: channel bias for NCHW maps (axis 1)
    /// or feature bias for row-major activations (last axis).
    pub fn bias_add(self, bias: Var<'t>, axis: usize) -> Result<Var<'t>> {
        let (x, b) = (self.value(), bias.value());
        if axis >= x.ndim() || b.ndim() != 1 || b.numel() != x.dim(axis) {
            return Err(Error::shape(
                "bias_add",
                format!("bias {:?} on axis {axis} of {:?}", b.shape(), x.shape()),
            ));
        }
        let (outer, len, inner) = axis_split(x.shape(), axis);
        let mut out = x.data().to_vec();
        for o in 0..outer {
            for c in 0..len {
                let base = (o * len + c) * inner;
                let bv = b.data()[c];
                for v in &mut out[base..base + inner] {
                    *v += bv;
                }
            }
        }
        let out = Tensor::new(x.shape().to_vec(), out)?;
        self.tape().record(&[self, bias], out, BiasAdd { axis })
    }
}

#[cfg(test)]
mod tests {
    use crate::autograd::Tape;
    use crate::tensor::Tensor;

    #[test]
    fn relu_sigmoid_softmax_examples() {
        let tape = Tape::new();
        let x = tape.constant(Tensor::new([3], vec![-2.0, 0.0, 3.0]).unwrap());
        assert_eq!(x.relu().unwrap().value().data(), &[0.0, 0.0, 3.0]);
        let z = tape.constant(Tensor::zeros([1]));
        assert_eq!(z.sigmoid().unwrap().value().data(), &[0.5]);
        let s = tape
            .constant(Tensor::zeros([3]))
            .softmax(0)
            .unwrap()
            .value();
        for v in s.data() {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn sum_of_squares_gradient() {
        let tape = Tape::new();
        let x = tape.leaf(Tensor::new([2], vec![1.0, 2.0]).unwrap());
        let loss = x.mul(x).unwrap().sum().unwrap();
        tape.backward(loss).unwrap();
        assert_eq!(x.grad().unwrap().data(), &[2.0, 4.0]);
    }

    #[test]
    fn sum_gradient_is_ones() {
        let tape = Tape::new();
        let x = tape.leaf(Tensor::zeros([2, 3, 4]));
        tape.backward(x.sum().unwrap()).unwrap();
        assert_eq!(x.grad().unwrap(), Tensor::ones([2, 3, 4]));
    }

    #[test]
    fn binary_ops_reject_shape_mismatch() {
        let tape = Tape::new();
        let a = tape.constant(Tensor::zeros([2]));
        let b = tape.constant(Tensor::zeros([3]));
        assert!(a.add(b).is_err());
        assert!(a.mul(b).is_err());
        assert!(a.sub(b).is_err());
    }

    #[test]
    fn softmax_along_inner_axis_sums_to_one() {
        let tape = Tape::new();
        let x = tape.constant(Tensor::from_fn([2, 3, 2], |i| (i as f64 * 0.7).sin() * 5.0));
        let y = x.softmax(1).unwrap().value();
        for o in 0..2 {
            for i in 0..2 {
                let s: f64 = (0..3).map(|k| y.at(&[o, k, i])).sum();
                assert!((s - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn bias_add_on_channel_axis() {
        let tape = Tape::new();
        let x = tape.constant(Tensor::zeros([1, 2, 1, 2]));
        let b = tape.constant(Tensor::new([2], vec![1.0, -1.0]).unwrap());
        let y = x.bias_add(b, 1).unwrap().value();
        assert_eq!(y.data(), &[1.0, 1.0, -1.0, -1.0]);
    }
}
