use std::cell::RefCell;
use std::collections::HashMap;
use std::rc::Rc;

use super::{AutodiffError, Tensor};

/// Reverse pass of one recorded operation: receives the gradient flowing into
/// the output, the input values and the output value, and returns one
/// gradient per input (same order, same shapes).
pub type BackwardFn = Box<dyn Fn(&Tensor, &[&Tensor], &Tensor) -> Vec<Tensor>>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Kind {
    Param,
    Constant,
    Op,
}

struct Node {
    value: Rc<Tensor>,
    parents: Vec<usize>,
    backward: Option<BackwardFn>,
    kind: Kind,
}

/// Define-by-run recording of a computation. A tape is built fresh for every
/// evaluation; node ids grow monotonically so the graph is acyclic by
/// construction.
#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: usize,
}

impl std::fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Var").field("id", &self.id).field("shape", &self.shape()).finish()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&self, value: Tensor, parents: Vec<usize>, backward: Option<BackwardFn>, kind: Kind) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node { value: Rc::new(value), parents, backward, kind });
        Var { tape: self, id: nodes.len() - 1 }
    }

    /// Registers a differentiable leaf.
    pub fn param(&self, value: Tensor) -> Var<'_> {
        self.push(value, Vec::new(), None, Kind::Param)
    }

    pub fn constant(&self, value: Tensor) -> Var<'_> {
        self.push(value, Vec::new(), None, Kind::Constant)
    }

    /// Records an operation with a hand-written reverse pass.
    pub fn custom<'t, F>(&'t self, inputs: &[Var<'t>], value: Tensor, backward: F) -> Var<'t>
    where
        F: Fn(&Tensor, &[&Tensor], &Tensor) -> Vec<Tensor> + 'static,
    {
        let parents = inputs
            .iter()
            .map(|v| {
                assert!(std::ptr::eq(v.tape, self), "inputs must live on this tape");
                v.id
            })
            .collect();
        self.push(value, parents, Some(Box::new(backward)), Kind::Op)
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Reverse sweep from a scalar `loss`. Returns the gradient of the loss
    /// with respect to every registered parameter; parameters that do not
    /// influence the loss get zeros.
    pub fn backward(&self, loss: Var<'_>) -> Result<Gradients, AutodiffError> {
        assert!(std::ptr::eq(loss.tape, self), "loss must live on this tape");
        let nodes = self.nodes.borrow();
        let loss_value = &nodes[loss.id].value;
        if loss_value.len() != 1 {
            return Err(AutodiffError::NonScalarLoss { shape: loss_value.shape().to_vec() });
        }
        if !loss_value.is_finite() {
            return Err(AutodiffError::NonFinite { node: loss.id });
        }

        let mut grads: Vec<Option<Tensor>> = vec![None; loss.id + 1];
        grads[loss.id] = Some(Tensor::full(loss_value.shape(), 1.0));

        for id in (0..=loss.id).rev() {
            let node = &nodes[id];
            let Some(backward) = &node.backward else { continue };
            let Some(g) = grads[id].take() else { continue };
            let inputs: Vec<&Tensor> = node.parents.iter().map(|&p| nodes[p].value.as_ref()).collect();
            let parent_grads = backward(&g, &inputs, &node.value);
            debug_assert_eq!(parent_grads.len(), node.parents.len());
            for (&p, pg) in node.parents.iter().zip(parent_grads) {
                debug_assert_eq!(pg.len(), nodes[p].value.len(), "gradient shape for node {p}");
                if !pg.is_finite() {
                    return Err(AutodiffError::NonFinite { node: p });
                }
                match &mut grads[p] {
                    Some(acc) => acc.add_assign(&pg),
                    slot @ None => *slot = Some(pg),
                }
            }
        }

        let mut out = HashMap::new();
        for (id, node) in nodes.iter().enumerate() {
            if node.kind == Kind::Param {
                let g = grads.get_mut(id).and_then(Option::take).unwrap_or_else(|| Tensor::zeros(node.value.shape()));
                out.insert(id, g);
            }
        }
        Ok(Gradients { grads: out })
    }
}

impl<'t> Var<'t> {
    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn value(&self) -> Rc<Tensor> {
        Rc::clone(&self.tape.nodes.borrow()[self.id].value)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.nodes.borrow()[self.id].value.shape().to_vec()
    }

    pub fn item(&self) -> f64 {
        self.value().item()
    }
}

/// Parameter gradients produced by [`Tape::backward`].
#[derive(Debug)]
pub struct Gradients {
    grads: HashMap<usize, Tensor>,
}

impl Gradients {
    /// # Panics
    /// If `var` is not a registered parameter of the tape that produced these
    /// gradients.
    pub fn wrt(&self, var: Var<'_>) -> &Tensor {
        self.grads.get(&var.id).expect("gradient requested for a non-parameter")
    }

    pub fn take(&mut self, var: Var<'_>) -> Tensor {
        self.grads.remove(&var.id).expect("gradient requested for a non-parameter")
    }
}
