use crate::error::{Error, Result};
use crate::tensor::conv::ConvGeom;
use crate::tensor::{Real, Tensor};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(pub(super) usize);

pub(super) enum Op<T> {
    Leaf,
    Conv2d {
        input: Var,
        weight: Var,
        geom: ConvGeom,
    },
    BatchNorm {
        input: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<T>,
        inv_std: Vec<T>,
        train: bool,
    },
    Prelu {
        input: Var,
        slope: Var,
    },
    Add {
        a: Var,
        b: Var,
    },
    Linear {
        input: Var,
        weight: Var,
        bias: Var,
    },
    MaxPool2d {
        input: Var,
        argmax: Vec<usize>,
    },
    MeanFreq {
        input: Var,
    },
    StatsPool {
        input: Var,
        mean: Vec<T>,
        std: Vec<T>,
    },
    MeanTime {
        input: Var,
    },
    SoftmaxCrossEntropy {
        logits: Var,
        probs: Vec<T>,
        labels: Vec<usize>,
    },
}

pub(super) struct Node<T> {
    pub value: Tensor<T>,
    pub grad: Option<Vec<T>>,
    pub requires_grad: bool,
    pub op: Op<T>,
}

/// Recording of one forward pass.
pub struct Tape<T: Real> {
    pub(super) nodes: Vec<Node<T>>,
    check_finite: bool,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Tape<T> {
    /// Non-finite outputs are reported as errors in debug builds.
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            check_finite: cfg!(debug_assertions),
        }
    }

    pub fn with_finite_checks(mut self, on: bool) -> Self {
        self.check_finite = on;
        self
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            grad: None,
            requires_grad,
            op: Op::Leaf,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn grad(&self, v: Var) -> Option<&[T]> {
        self.nodes[v.0].grad.as_deref()
    }

    pub(super) fn push(&mut self, name: &str, value: Tensor<T>, inputs: &[Var], op: Op<T>) -> Result<Var> {
        if self.check_finite && !value.all_finite() {
            return Err(Error::NonFinite(name.to_string()));
        }
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            grad: None,
            requires_grad,
            op,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    pub(super) fn accumulate(&mut self, v: Var, contribution: Vec<T>) {
        let node = &mut self.nodes[v.0];
        if !node.requires_grad {
            return;
        }
        match &mut node.grad {
            Some(g) => g.iter_mut().zip(contribution).for_each(|(a, b)| *a += b),
            None => node.grad = Some(contribution),
        }
    }

    /// Back-propagates from a scalar node, seeding its gradient with 1.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.nodes[loss.0].value.numel() != 1 {
            return Err(Error::Shape(format!(
                "backward needs a scalar, got shape {:?}",
                self.nodes[loss.0].value.shape()
            )));
        }
        self.backward_from(loss, vec![T::one()])
    }

    /// Vector-Jacobian product: back-propagates `seed` (shaped like `out`)
    /// from `out`.
    pub fn backward_from(&mut self, out: Var, seed: Vec<T>) -> Result<()> {
        if seed.len() != self.nodes[out.0].value.numel() {
            return Err(Error::Shape(format!(
                "seed has {} values, node has shape {:?}",
                seed.len(),
                self.nodes[out.0].value.shape()
            )));
        }
        for node in &mut self.nodes {
            node.grad = None;
        }
        if !self.nodes[out.0].requires_grad {
            return Ok(());
        }
        self.nodes[out.0].grad = Some(seed);
        for i in (0..=out.0).rev() {
            if !self.nodes[i].requires_grad || matches!(self.nodes[i].op, Op::Leaf) {
                continue;
            }
            let Some(grad) = self.nodes[i].grad.take() else {
                continue;
            };
            self.backward_node(i, &grad);
            if self.check_finite && grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::NonFinite(format!("gradient at node {i}")));
            }
            self.nodes[i].grad = Some(grad);
        }
        Ok(())
    }

    fn backward_node(&mut self, i: usize, grad: &[T]) {
        let contributions: Vec<(Var, Vec<T>)> = {
            let node = &self.nodes[i];
            match &node.op {
                Op::Leaf => Vec::new(),
                Op::Conv2d {
                    input,
                    weight,
                    geom,
                } => self.conv2d_backward(*input, *weight, geom, grad),
                Op::BatchNorm {
                    input,
                    gamma,
                    beta,
                    xhat,
                    inv_std,
                    train,
                } => self.batch_norm_backward(*input, *gamma, *beta, xhat, inv_std, *train, grad),
                Op::Prelu { input, slope } => self.prelu_backward(*input, *slope, grad),
                Op::Add { a, b } => vec![(*a, grad.to_vec()), (*b, grad.to_vec())],
                Op::Linear {
                    input,
                    weight,
                    bias,
                } => self.linear_backward(*input, *weight, *bias, grad),
                Op::MaxPool2d { input, argmax } => self.max_pool2d_backward(*input, argmax, grad),
                Op::MeanFreq { input } => self.mean_freq_backward(*input, grad),
                Op::StatsPool { input, mean, std } => self.stats_pool_backward(*input, mean, std, grad),
                Op::MeanTime { input } => self.mean_time_backward(*input, grad),
                Op::SoftmaxCrossEntropy {
                    logits,
                    probs,
                    labels,
                } => self.softmax_cross_entropy_backward(*logits, probs, labels, grad),
            }
        };
        for (v, g) in contributions {
            self.accumulate(v, g);
        }
    }

    /// Elementwise sum of two same-shape nodes.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() {
            return Err(Error::Shape(format!(
                "add: {:?} vs {:?}",
                va.shape(),
                vb.shape()
            )));
        }
        let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| x + y).collect();
        let value = Tensor::new(va.shape().to_vec(), data)?;
        self.push("add", value, &[a, b], Op::Add { a, b })
    }
}
