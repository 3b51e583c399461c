//! Reverse-mode gradient tape over the primitives in [`super::ops`].

use crate::error::{Error, Result};

use super::ops::{self, ConvGeometry};
use super::Tensor;

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

enum Op {
    Leaf,
    Conv {
        input: Var,
        kernel: Var,
        bias: Var,
        col: Vec<f64>,
        geom: ConvGeometry,
    },
    Relu(Var),
    MaxPool {
        input: Var,
        argmax: Vec<usize>,
    },
    Upsample(Var),
    Dense {
        input: Var,
        weight: Var,
        bias: Var,
    },
    GlobalAvgPool(Var),
    PixelSoftmax(Var),
    Concat(Var, Var),
}

struct Node {
    value: Tensor,
    requires_grad: bool,
    op: Op,
}

/// Records a forward computation so that gradients can be pulled back from
/// any node. Nodes are appended in evaluation order, so the backward sweep is
/// a single reverse pass.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    pub fn take(&mut self, v: Var) -> Option<Vec<f64>> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.push(value, requires_grad, Op::Leaf)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Tensor, requires_grad: bool, op: Op) -> Var {
        self.nodes.push(Node {
            value,
            requires_grad,
            op,
        });
        Var(self.nodes.len() - 1)
    }

    fn any_grad(&self, vars: &[Var]) -> bool {
        vars.iter().any(|&v| self.requires_grad(v))
    }

    pub fn conv2d(
        &mut self,
        input: Var,
        kernel: Var,
        bias: Var,
        stride: usize,
        pad: usize,
    ) -> Result<Var> {
        let (out, col, geom) = ops::conv2d_forward(
            self.value(input),
            self.value(kernel),
            self.value(bias),
            stride,
            pad,
        )?;
        let rg = self.any_grad(&[input, kernel, bias]);
        Ok(self.push(
            out,
            rg,
            Op::Conv {
                input,
                kernel,
                bias,
                col,
                geom,
            },
        ))
    }

    pub fn relu(&mut self, input: Var) -> Var {
        let out = ops::relu(self.value(input));
        let rg = self.requires_grad(input);
        self.push(out, rg, Op::Relu(input))
    }

    pub fn maxpool2(&mut self, input: Var) -> Result<Var> {
        let (out, argmax) = ops::maxpool2_forward(self.value(input))?;
        let rg = self.requires_grad(input);
        Ok(self.push(out, rg, Op::MaxPool { input, argmax }))
    }

    pub fn upsample_nearest2(&mut self, input: Var) -> Result<Var> {
        let out = ops::upsample_nearest2(self.value(input))?;
        let rg = self.requires_grad(input);
        Ok(self.push(out, rg, Op::Upsample(input)))
    }

    pub fn dense(&mut self, input: Var, weight: Var, bias: Var) -> Result<Var> {
        let out = ops::dense(self.value(input), self.value(weight), self.value(bias))?;
        let rg = self.any_grad(&[input, weight, bias]);
        Ok(self.push(
            out,
            rg,
            Op::Dense {
                input,
                weight,
                bias,
            },
        ))
    }

    pub fn global_avg_pool(&mut self, input: Var) -> Result<Var> {
        let out = ops::global_avg_pool(self.value(input))?;
        let rg = self.requires_grad(input);
        Ok(self.push(out, rg, Op::GlobalAvgPool(input)))
    }

    pub fn pixel_softmax(&mut self, input: Var) -> Result<Var> {
        let out = ops::pixel_softmax(self.value(input))?;
        let rg = self.requires_grad(input);
        Ok(self.push(out, rg, Op::PixelSoftmax(input)))
    }

    pub fn concat_channels(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = ops::concat_channels(self.value(a), self.value(b))?;
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(out, rg, Op::Concat(a, b)))
    }

    /// Smallest distance of any recorded relu input from zero, or of any
    /// maxpool winner from its runner-up. Finite-difference checks are only
    /// meaningful when this exceeds the probe step. Pooling ties between
    /// exact zeros are skipped: those are rectified values, which stay at
    /// zero as long as the relu margin holds.
    pub fn kink_margin(&self) -> f64 {
        let mut margin = f64::INFINITY;
        for node in &self.nodes {
            match &node.op {
                Op::Relu(x) => {
                    for &v in self.value(*x).values() {
                        margin = margin.min(v.abs());
                    }
                }
                Op::MaxPool { input, argmax } => {
                    let x = self.value(*input).values();
                    let (_, _, w) = self.value(*input).chw().expect("recorded as rank 3");
                    for &best in argmax {
                        let (row, col) = (best / w, best % w);
                        let first = (row - row % 2) * w + (col - col % 2);
                        for idx in [first, first + 1, first + w, first + w + 1] {
                            if idx != best && !(x[best] == 0.0 && x[idx] == 0.0) {
                                margin = margin.min(x[best] - x[idx]);
                            }
                        }
                    }
                }
                _ => {}
            }
        }
        margin
    }

    /// Pulls `seed` (the gradient of some scalar with respect to `output`)
    /// back through the tape.
    pub fn backward(&self, output: Var, seed: &[f64]) -> Result<Gradients> {
        if seed.len() != self.value(output).len() {
            return Err(Error::dim(
                "seed",
                format!(
                    "expected {} entries, got {}",
                    self.value(output).len(),
                    seed.len()
                ),
            ));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; output.0 + 1];
        grads[output.0] = Some(seed.to_vec());

        for idx in (0..=output.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[idx].take() else {
                continue;
            };
            let mut send = |v: Var, delta: Vec<f64>| {
                if !self.requires_grad(v) {
                    return;
                }
                match &mut grads[v.0] {
                    Some(acc) => acc.iter_mut().zip(&delta).for_each(|(a, d)| *a += d),
                    slot => *slot = Some(delta),
                }
            };
            match &node.op {
                Op::Leaf => unreachable!(),
                Op::Conv {
                    input,
                    kernel,
                    bias,
                    col,
                    geom,
                } => {
                    let cg = ops::conv2d_backward(
                        geom,
                        col,
                        self.value(*kernel).values(),
                        &g,
                        self.requires_grad(*input),
                    );
                    if let Some(gi) = cg.input {
                        send(*input, gi);
                    }
                    send(*kernel, cg.kernel);
                    send(*bias, cg.bias);
                }
                Op::Relu(x) => send(*x, ops::relu_backward(self.value(*x).values(), &g)),
                Op::MaxPool { input, argmax } => send(
                    *input,
                    ops::maxpool2_backward(self.value(*input).len(), argmax, &g),
                ),
                Op::Upsample(x) => {
                    let (c, h, w) = self.value(*x).chw()?;
                    send(*x, ops::upsample_nearest2_backward(c, h, w, &g));
                }
                Op::Dense {
                    input,
                    weight,
                    bias,
                } => {
                    let (gi, gw, gb) = ops::dense_backward(
                        self.value(*input).values(),
                        self.value(*weight).values(),
                        &g,
                    );
                    send(*input, gi);
                    send(*weight, gw);
                    send(*bias, gb);
                }
                Op::GlobalAvgPool(x) => {
                    let (c, h, w) = self.value(*x).chw()?;
                    send(*x, ops::global_avg_pool_backward(c, h, w, &g));
                }
                Op::PixelSoftmax(x) => {
                    send(*x, ops::pixel_softmax_backward(node.value.values(), &g))
                }
                Op::Concat(a, b) => {
                    let split = self.value(*a).len();
                    send(*a, g[..split].to_vec());
                    send(*b, g[split..].to_vec());
                }
            }
        }
        if grads.iter().flatten().flatten().any(|v| !v.is_finite()) {
            return Err(Error::Numeric(
                "non-finite gradient in backward pass".into(),
            ));
        }
        Ok(Gradients { grads })
    }
}
