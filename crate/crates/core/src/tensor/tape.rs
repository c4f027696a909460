//! Operation tape for reverse-mode differentiation.
//!
//! Forward calls append nodes; [`Tape::backward`] walks them in reverse and
//! accumulates gradients. A parameter registered once and consumed by several
//! operations (the shared feature tower) receives the sum of all
//! contributions.

use std::borrow::Cow;

use rand::Rng;

use super::ops::{self, Phase};
use super::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Dropout behaviour for one forward pass. Training masks are drawn from a
/// stream seeded by `seed`, so a pass can be replayed exactly.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DropoutMode {
    Eval,
    Train { seed: u64 },
}

enum Op<T> {
    Leaf,
    Conv2d {
        input: Var,
        kernel: Var,
        bias: Var,
        stride: usize,
        padding: usize,
    },
    Maxpool2d {
        input: Var,
        argmax: Vec<usize>,
    },
    FullyConnected {
        input: Var,
        weight: Var,
        bias: Var,
    },
    Relu {
        input: Var,
    },
    Dropout {
        input: Var,
        mask: Vec<T>,
    },
    Softmax {
        input: Var,
    },
    Concat {
        parts: Vec<Var>,
    },
    Reshape {
        input: Var,
    },
    Sum {
        input: Var,
    },
    Mul {
        a: Var,
        b: Var,
    },
    CrossEntropy {
        probs: Var,
        labels: Vec<u8>,
    },
}

struct Node<'p, T: Scalar> {
    value: Cow<'p, Tensor<T>>,
    op: Op<T>,
    requires_grad: bool,
}

pub struct Tape<'p, T: Scalar> {
    nodes: Vec<Node<'p, T>>,
    grads: Vec<Option<Vec<T>>>,
}

impl<T: Scalar> Default for Tape<'_, T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<'p, T: Scalar> Tape<'p, T> {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            grads: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Cow<'p, Tensor<T>>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// Constant input; no gradient is propagated into it.
    pub fn constant(&mut self, t: Tensor<T>) -> Var {
        self.push(Cow::Owned(t), Op::Leaf, false)
    }

    /// Owned leaf that collects a gradient.
    pub fn variable(&mut self, t: Tensor<T>) -> Var {
        self.push(Cow::Owned(t), Op::Leaf, true)
    }

    /// Borrowed parameter that collects a gradient.
    pub fn param(&mut self, t: &'p Tensor<T>) -> Var {
        self.push(Cow::Borrowed(t), Op::Leaf, true)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    /// Gradient of the last `backward` loss with respect to `v`, if any flowed.
    pub fn grad(&self, v: Var) -> Option<&[T]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    pub fn conv2d(&mut self, input: Var, kernel: Var, bias: Var, stride: usize, padding: usize) -> Result<Var> {
        let y = ops::conv2d_forward(self.value(input), self.value(kernel), self.value(bias), stride, padding)?;
        let rg = self.rg(&[input, kernel, bias]);
        Ok(self.push(
            Cow::Owned(y),
            Op::Conv2d {
                input,
                kernel,
                bias,
                stride,
                padding,
            },
            rg,
        ))
    }

    pub fn maxpool2d(&mut self, input: Var, window: usize, stride: usize) -> Result<Var> {
        let (y, argmax) = ops::maxpool2d_forward(self.value(input), window, stride)?;
        let rg = self.rg(&[input]);
        Ok(self.push(Cow::Owned(y), Op::Maxpool2d { input, argmax }, rg))
    }

    pub fn fc(&mut self, input: Var, weight: Var, bias: Var) -> Result<Var> {
        let y = ops::fc_forward(self.value(input), self.value(weight), self.value(bias))?;
        let rg = self.rg(&[input, weight, bias]);
        Ok(self.push(Cow::Owned(y), Op::FullyConnected { input, weight, bias }, rg))
    }

    pub fn relu(&mut self, input: Var) -> Var {
        let y = ops::relu_forward(self.value(input));
        let rg = self.rg(&[input]);
        self.push(Cow::Owned(y), Op::Relu { input }, rg)
    }

    pub fn dropout<R: Rng + ?Sized>(&mut self, input: Var, rate: f64, phase: Phase, rng: &mut R) -> Result<Var> {
        let (y, mask) = ops::dropout_forward(self.value(input), rate, phase, rng)?;
        let rg = self.rg(&[input]);
        Ok(self.push(Cow::Owned(y), Op::Dropout { input, mask }, rg))
    }

    pub fn softmax(&mut self, input: Var) -> Result<Var> {
        let y = ops::softmax(self.value(input))?;
        let rg = self.rg(&[input]);
        Ok(self.push(Cow::Owned(y), Op::Softmax { input }, rg))
    }

    /// Flattens and concatenates, in order.
    pub fn concat(&mut self, parts: &[Var]) -> Var {
        let mut data = Vec::new();
        for &p in parts {
            data.extend_from_slice(self.value(p).data());
        }
        let rg = self.rg(parts);
        self.push(
            Cow::Owned(Tensor::vector(data)),
            Op::Concat {
                parts: parts.to_vec(),
            },
            rg,
        )
    }

    pub fn reshape(&mut self, input: Var, dims: Vec<usize>) -> Result<Var> {
        let y = self.value(input).clone().reshape(dims)?;
        let rg = self.rg(&[input]);
        Ok(self.push(Cow::Owned(y), Op::Reshape { input }, rg))
    }

    pub fn sum(&mut self, input: Var) -> Var {
        let s = self.value(input).data().iter().copied().sum();
        let rg = self.rg(&[input]);
        self.push(Cow::Owned(Tensor::scalar(s)), Op::Sum { input }, rg)
    }

    /// Element-wise product of equal-shape tensors.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.dims() != tb.dims() {
            return Err(Error::dim("mul", "shape", format!("{:?}", ta.dims()), format!("{:?}", tb.dims())));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| x * y).collect();
        let y = Tensor::new(ta.dims().to_vec(), data)?;
        y.ensure_finite("mul")?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(Cow::Owned(y), Op::Mul { a, b }, rg))
    }

    /// Mean cross-entropy of a `[B, 2]` (or `[2]`) probability node.
    pub fn cross_entropy(&mut self, probs: Var, labels: &[u8]) -> Result<Var> {
        let loss = ops::cross_entropy_loss(self.value(probs), labels)?;
        ops::validate_ce(self.value(probs), labels)?;
        if !loss.is_finite() {
            return Err(Error::Numeric("cross-entropy".into()));
        }
        let rg = self.rg(&[probs]);
        Ok(self.push(
            Cow::Owned(Tensor::scalar(loss)),
            Op::CrossEntropy {
                probs,
                labels: labels.to_vec(),
            },
            rg,
        ))
    }

    fn accumulate(&mut self, v: Var, g: Vec<T>) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        match &mut self.grads[v.0] {
            Some(acc) => {
                for (a, b) in acc.iter_mut().zip(g) {
                    *a = *a + b;
                }
            }
            slot @ None => *slot = Some(g),
        }
    }

    /// Populates gradients of the scalar node `loss` with respect to every
    /// node that requires one. Replaces gradients from any previous call.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if loss.0 >= self.nodes.len() {
            return Err(Error::State(format!(
                "backward from node {} but the tape holds {} nodes; run a forward pass first",
                loss.0,
                self.nodes.len()
            )));
        }
        if self.value(loss).len() != 1 {
            return Err(Error::dim("backward", "loss", "scalar", self.value(loss).len()));
        }
        self.grads = vec![None; self.nodes.len()];
        self.grads[loss.0] = Some(vec![T::one()]);

        for i in (0..=loss.0).rev() {
            let Some(g) = self.grads[i].take() else {
                continue;
            };
            if g.iter().any(|v| !v.is_finite()) {
                return Err(Error::Numeric(format!("gradient at tape node {i}")));
            }
            let node = &self.nodes[i];
            let mut out: Vec<(Var, Vec<T>)> = Vec::new();
            match &node.op {
                Op::Leaf => {}
                Op::Conv2d {
                    input,
                    kernel,
                    bias,
                    stride,
                    padding,
                } => {
                    let want_input = self.nodes[input.0].requires_grad;
                    let grads = ops::conv2d_backward(
                        &self.nodes[input.0].value,
                        &self.nodes[kernel.0].value,
                        *stride,
                        *padding,
                        &g,
                        want_input,
                    );
                    if let Some(gx) = grads.input {
                        out.push((*input, gx));
                    }
                    out.push((*kernel, grads.kernel));
                    out.push((*bias, grads.bias));
                }
                Op::Maxpool2d { input, argmax } => {
                    let n = self.nodes[input.0].value.len();
                    out.push((*input, ops::maxpool2d_backward(n, argmax, &g)));
                }
                Op::FullyConnected { input, weight, bias } => {
                    let want_input = self.nodes[input.0].requires_grad;
                    let grads = ops::fc_backward(
                        &self.nodes[input.0].value,
                        &self.nodes[weight.0].value,
                        &g,
                        want_input,
                    );
                    if let Some(gx) = grads.input {
                        out.push((*input, gx));
                    }
                    out.push((*weight, grads.weight));
                    out.push((*bias, grads.bias));
                }
                Op::Relu { input } => {
                    out.push((*input, ops::relu_backward(&self.nodes[input.0].value, &g)));
                }
                Op::Dropout { input, mask } => {
                    out.push((*input, g.iter().zip(mask).map(|(&a, &m)| a * m).collect()));
                }
                Op::Softmax { input } => {
                    out.push((*input, ops::softmax_backward(&node.value, &g)));
                }
                Op::Concat { parts } => {
                    let mut offset = 0;
                    for p in parts {
                        let n = self.nodes[p.0].value.len();
                        out.push((*p, g[offset..offset + n].to_vec()));
                        offset += n;
                    }
                }
                Op::Reshape { input } => out.push((*input, g.clone())),
                Op::Sum { input } => {
                    let n = self.nodes[input.0].value.len();
                    out.push((*input, vec![g[0]; n]));
                }
                Op::Mul { a, b } => {
                    let (va, vb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
                    out.push((*a, g.iter().zip(vb.data()).map(|(&gi, &y)| gi * y).collect()));
                    out.push((*b, g.iter().zip(va.data()).map(|(&gi, &x)| gi * x).collect()));
                }
                Op::CrossEntropy { probs, labels } => {
                    out.push((
                        *probs,
                        ops::cross_entropy_backward(&self.nodes[probs.0].value, labels, g[0]),
                    ));
                }
            }
            self.grads[i] = Some(g);
            for (v, gv) in out {
                self.accumulate(v, gv);
            }
        }
        Ok(())
    }
}
