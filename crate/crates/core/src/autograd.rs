//! Tape-based reverse-mode differentiation.
//!
//! Every differentiable operation appends a node to a [`Tape`]; nodes are
//! therefore stored in topological order. [`Tape::backward`] walks the
//! nodes once in reverse, accumulating gradients into tracked leaves.
//!
//! A tape is single-threaded (`!Send`); independent tapes may run on
//! different threads.

use std::cell::{Cell, RefCell};
use std::fmt;
use std::rc::Rc;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Backward rule for one recorded operation.
///
/// `backward` returns one entry per input; `None` means "no gradient flows
/// to this input" and is treated as zero.
pub trait Function {
    fn name(&self) -> &'static str;

    fn backward(
        &self,
        inputs: &[&Tensor],
        output: &Tensor,
        grad_out: &Tensor,
    ) -> Result<Vec<Option<Tensor>>>;

    /// Like [`Function::backward`], told which inputs are tracked so that
    /// expensive unused gradients can be skipped.
    fn backward_masked(
        &self,
        inputs: &[&Tensor],
        output: &Tensor,
        grad_out: &Tensor,
        needs_grad: &[bool],
    ) -> Result<Vec<Option<Tensor>>> {
        let _ = needs_grad;
        self.backward(inputs, output, grad_out)
    }
}

struct Node {
    value: Rc<Tensor>,
    inputs: Vec<usize>,
    function: Option<Box<dyn Function>>,
    tracked: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum TapeState {
    Recording,
    Consumed,
}

pub struct Tape {
    nodes: RefCell<Vec<Node>>,
    leaf_grads: RefCell<Vec<Option<Tensor>>>,
    state: Cell<TapeState>,
}

/// Handle to a value recorded on a tape.
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: usize,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            nodes: RefCell::new(Vec::new()),
            leaf_grads: RefCell::new(Vec::new()),
            state: Cell::new(TapeState::Recording),
        }
    }

    /// Registers a tracked leaf (a parameter or an input we differentiate).
    pub fn leaf(&self, value: Tensor) -> Var<'_> {
        self.push(value, Vec::new(), None, true)
    }

    /// Registers an untracked constant.
    pub fn constant(&self, value: Tensor) -> Var<'_> {
        self.push(value, Vec::new(), None, false)
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(
        &self,
        value: Tensor,
        inputs: Vec<usize>,
        function: Option<Box<dyn Function>>,
        tracked: bool,
    ) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value: Rc::new(value),
            inputs,
            function,
            tracked,
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    /// Appends the result of a differentiable operation.
    ///
    /// The output is tracked iff any input is tracked; untracked results
    /// drop their backward rule immediately.
    pub fn record<'t>(
        &'t self,
        inputs: &[Var<'t>],
        output: Tensor,
        function: impl Function + 'static,
    ) -> Result<Var<'t>> {
        if self.state.get() == TapeState::Consumed {
            return Err(Error::Tape(format!(
                "cannot record `{}` on a consumed tape",
                function.name()
            )));
        }
        if inputs.iter().any(|v| !std::ptr::eq(v.tape, self)) {
            return Err(Error::Tape(format!(
                "`{}` mixes variables from different tapes",
                function.name()
            )));
        }
        if !output.all_finite() {
            return Err(Error::Tape(format!(
                "`{}` produced a non-finite value",
                function.name()
            )));
        }
        let tracked = {
            let nodes = self.nodes.borrow();
            inputs.iter().any(|v| nodes[v.id].tracked)
        };
        let (ids, function) = if tracked {
            (
                inputs.iter().map(|v| v.id).collect(),
                Some(Box::new(function) as Box<dyn Function>),
            )
        } else {
            (Vec::new(), None)
        };
        Ok(self.push(output, ids, function, tracked))
    }

    /// Runs reverse-mode differentiation from a scalar `loss`.
    ///
    /// Gradients are retained for tracked leaves and read back with
    /// [`Tape::grad`]. A tape supports exactly one backward pass.
    pub fn backward(&self, loss: Var<'_>) -> Result<()> {
        if !std::ptr::eq(loss.tape, self) {
            return Err(Error::Tape("loss belongs to a different tape".into()));
        }
        if self.state.get() == TapeState::Consumed {
            return Err(Error::Tape("backward called twice on one tape".into()));
        }
        let nodes = self.nodes.borrow();
        let loss_node = &nodes[loss.id];
        if loss_node.value.numel() != 1 {
            return Err(Error::Tape(format!(
                "backward needs a scalar loss, got shape {:?}",
                loss_node.value.shape()
            )));
        }
        self.state.set(TapeState::Consumed);

        let mut grads: Vec<Option<Tensor>> = (0..=loss.id).map(|_| None).collect();
        let mut leaf_grads: Vec<Option<Tensor>> = (0..nodes.len()).map(|_| None).collect();
        if loss_node.tracked {
            grads[loss.id] = Some(Tensor::ones(loss_node.value.shape().to_vec()));
        }

        for id in (0..=loss.id).rev() {
            let Some(grad) = grads[id].take() else {
                continue;
            };
            let node = &nodes[id];
            let Some(function) = &node.function else {
                leaf_grads[id] = Some(grad);
                continue;
            };
            let inputs: Vec<&Tensor> = node.inputs.iter().map(|&i| &*nodes[i].value).collect();
            let needs: Vec<bool> = node.inputs.iter().map(|&i| nodes[i].tracked).collect();
            let input_grads = function.backward_masked(&inputs, &node.value, &grad, &needs)?;
            if input_grads.len() != node.inputs.len() {
                return Err(Error::Tape(format!(
                    "`{}` returned {} gradients for {} inputs",
                    function.name(),
                    input_grads.len(),
                    node.inputs.len()
                )));
            }
            for (&input, g) in node.inputs.iter().zip(input_grads) {
                let Some(g) = g else { continue };
                if !nodes[input].tracked {
                    continue;
                }
                if g.shape() != nodes[input].value.shape() {
                    return Err(Error::Tape(format!(
                        "`{}` gradient shape {:?} does not match input {:?}",
                        function.name(),
                        g.shape(),
                        nodes[input].value.shape()
                    )));
                }
                match &mut grads[input] {
                    Some(acc) => acc.add_assign(&g),
                    slot => *slot = Some(g),
                }
            }
        }
        *self.leaf_grads.borrow_mut() = leaf_grads;
        Ok(())
    }

    /// Gradient of a tracked leaf after [`Tape::backward`].
    ///
    /// Tracked leaves that the loss does not depend on get a zero gradient;
    /// untracked values return `None`.
    pub fn grad(&self, var: Var<'_>) -> Option<Tensor> {
        let nodes = self.nodes.borrow();
        let node = nodes.get(var.id)?;
        if !node.tracked || node.function.is_some() || self.state.get() != TapeState::Consumed {
            return None;
        }
        let grads = self.leaf_grads.borrow();
        Some(
            grads
                .get(var.id)
                .and_then(|g| g.clone())
                .unwrap_or_else(|| Tensor::zeros(node.value.shape().to_vec())),
        )
    }
}

impl<'t> Var<'t> {
    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn value(&self) -> Rc<Tensor> {
        self.tape.nodes.borrow()[self.id].value.clone()
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.nodes.borrow()[self.id].value.shape().to_vec()
    }

    pub fn is_tracked(&self) -> bool {
        self.tape.nodes.borrow()[self.id].tracked
    }

    pub fn grad(&self) -> Option<Tensor> {
        self.tape.grad(*self)
    }
}

impl fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Var#{}{:?}", self.id, self.shape())
    }
}
