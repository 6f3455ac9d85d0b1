//! Central finite-difference gradient checking.
//!
//! The checker only ever evaluates the forward pass, so it is independent of
//! every backward rule it validates.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autograd::{Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Step used for the central difference `(f(θ+h) − f(θ−h)) / 2h`.
pub const DEFAULT_STEP: f64 = 1e-4;
/// Maximum accepted relative error.
pub const DEFAULT_TOLERANCE: f64 = 1e-3;

/// Outcome of one check: relative error per input tensor.
#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub rel_errors: Vec<f64>,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.rel_errors.iter().copied().fold(0.0, f64::max)
    }

    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_error() < tol
    }
}

/// Norm-wise relative error `‖a − n‖ / max(‖a‖, ‖n‖, 1e-8)`.
pub fn relative_error(analytic: &Tensor, numeric: &Tensor) -> f64 {
    let diff: f64 = analytic
        .data()
        .iter()
        .zip(numeric.data())
        .map(|(a, n)| (a - n).powi(2))
        .sum::<f64>()
        .sqrt();
    let scale = analytic
        .norm_sq()
        .sqrt()
        .max(numeric.norm_sq().sqrt())
        .max(1e-8);
    diff / scale
}

/// Compares the tape gradient of scalar `f` against central differences for
/// every element of every input.
pub fn check<F>(inputs: &[Tensor], f: F, step: f64) -> Result<GradCheckReport>
where
    F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> Result<Var<'t>>,
{
    let tape = Tape::new();
    let vars: Vec<Var<'_>> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let loss = f(&tape, &vars)?;
    tape.backward(loss)?;
    let analytic: Vec<Tensor> = vars
        .iter()
        .map(|v| {
            v.grad()
                .ok_or_else(|| Error::Tape("missing leaf gradient".into()))
        })
        .collect::<Result<_>>()?;

    let eval = |probe: &[Tensor]| -> Result<f64> {
        let tape = Tape::new();
        let vars: Vec<Var<'_>> = probe.iter().map(|t| tape.constant(t.clone())).collect();
        f(&tape, &vars)?.value().item()
    };

    let mut probe: Vec<Tensor> = inputs.to_vec();
    let mut rel_errors = Vec::with_capacity(inputs.len());
    for (i, grad) in analytic.iter().enumerate() {
        let mut numeric = Tensor::zeros(inputs[i].shape().to_vec());
        for j in 0..inputs[i].numel() {
            let orig = inputs[i].data()[j];
            probe[i].data_mut()[j] = orig + step;
            let plus = eval(&probe)?;
            probe[i].data_mut()[j] = orig - step;
            let minus = eval(&probe)?;
            probe[i].data_mut()[j] = orig;
            numeric.data_mut()[j] = (plus - minus) / (2.0 * step);
        }
        rel_errors.push(relative_error(grad, &numeric));
    }
    Ok(GradCheckReport { rel_errors })
}

/// Reduces a non-scalar output to a scalar via a fixed random projection
/// `sum(x ⊙ R)`, so that every output element contributes to the check.
pub fn project<'t>(x: Var<'t>, seed: u64) -> Result<Var<'t>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let weights = Tensor::from_fn(x.shape(), |_| rng.random_range(-1.0..1.0));
    let r = x.tape().constant(weights);
    x.mul(r)?.sum()
}
