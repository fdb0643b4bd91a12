//! Reverse-mode differentiation over a recorded operation sequence.
//!
//! Every op appends a node holding its output value and whatever the
//! backward rule needs. [`Tape::backward`] walks the nodes in reverse and
//! accumulates gradients with the per-op analytic rules from [`crate::ops`].

use crate::error::{Error, Result};
use crate::ops::conv::{conv2d, conv2d_backward, Conv2dSpec};
use crate::ops::elementwise::{self, Binary, Unary};
use crate::ops::layout;
use crate::ops::linear;
use crate::ops::norm::{self, NormMode, RunningStats};
use crate::ops::pool;
use crate::ops::sample;
use crate::tensor::{DType, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op {
    Leaf,
    Conv2d { x: Var, w: Var, b: Var, spec: Conv2dSpec },
    Sample { x: Var, points: Var },
    Unary { kind: Unary, x: Var },
    Binary { kind: Binary, a: Var, b: Var },
    Scale { x: Var, factor: f64 },
    GlobalPool { x: Var },
    Downsample { x: Var, stride: usize },
    Upsample { x: Var, factor: usize },
    Broadcast { x: Var },
    Linear { x: Var, w: Var, b: Var },
    BatchNorm { x: Var, gamma: Var, beta: Var, x_hat: Tensor, inv_std: Vec<f64>, mode: NormMode },
    Concat { parts: Vec<Var> },
    Reshape { x: Var },
    Permute { x: Var, perm: Vec<usize> },
    L1 { a: Var, b: Var },
    Sum { x: Var },
}

struct Node {
    value: Tensor,
    op: Op,
}

/// A value together with its gradient, when one was requested.
#[derive(Clone, Debug)]
pub struct GradPair {
    pub value: Tensor,
    pub grad: Option<Tensor>,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn pair(&self, v: Var, grads: &Gradients) -> GradPair {
        GradPair {
            value: self.value(v).clone(),
            grad: grads.get(v).cloned(),
        }
    }

    pub fn conv2d(&mut self, x: Var, w: Var, b: Var, spec: Conv2dSpec) -> Result<Var> {
        let out = conv2d(self.value(x), self.value(w), self.value(b), spec)?;
        Ok(self.push(out, Op::Conv2d { x, w, b, spec }))
    }

    pub fn bilinear_sample(&mut self, x: Var, points: Var) -> Result<Var> {
        let out = sample::bilinear_sample(self.value(x), self.value(points))?;
        Ok(self.push(out, Op::Sample { x, points }))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let out = elementwise::unary(Unary::Relu, self.value(x));
        self.push(out, Op::Unary { kind: Unary::Relu, x })
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let out = elementwise::unary(Unary::Sigmoid, self.value(x));
        self.push(out, Op::Unary { kind: Unary::Sigmoid, x })
    }

    /// `a + b`, with `b` broadcast over any extent-1 axes.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = elementwise::binary(Binary::Add, self.value(a), self.value(b))?;
        Ok(self.push(out, Op::Binary { kind: Binary::Add, a, b }))
    }

    /// `a ⊙ b`, with `b` broadcast over any extent-1 axes.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = elementwise::binary(Binary::Mul, self.value(a), self.value(b))?;
        Ok(self.push(out, Op::Binary { kind: Binary::Mul, a, b }))
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Var {
        let out = elementwise::scale(self.value(x), factor);
        self.push(out, Op::Scale { x, factor })
    }

    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var> {
        let out = pool::global_avg_pool(self.value(x))?;
        Ok(self.push(out, Op::GlobalPool { x }))
    }

    pub fn avg_downsample(&mut self, x: Var, stride: usize) -> Result<Var> {
        let out = pool::avg_downsample(self.value(x), stride)?;
        Ok(self.push(out, Op::Downsample { x, stride }))
    }

    pub fn bilinear_upsample(&mut self, x: Var, factor: usize) -> Result<Var> {
        let out = pool::bilinear_upsample(self.value(x), factor)?;
        Ok(self.push(out, Op::Upsample { x, factor }))
    }

    pub fn broadcast_to(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let out = pool::broadcast_to(self.value(x), shape)?;
        Ok(self.push(out, Op::Broadcast { x }))
    }

    pub fn fully_connected(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let out = linear::fully_connected(self.value(x), self.value(w), self.value(b))?;
        Ok(self.push(out, Op::Linear { x, w, b }))
    }

    /// Returns the output and, in train mode, the batch mean and unbiased
    /// variance for the caller to fold into its running statistics.
    pub fn batch_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        running: RunningStats<'_>,
        mode: NormMode,
    ) -> Result<(Var, Option<(Vec<f64>, Vec<f64>)>)> {
        let out = norm::batch_norm(self.value(x), self.value(gamma), self.value(beta), running, mode)?;
        let v = self.push(
            out.output,
            Op::BatchNorm {
                x,
                gamma,
                beta,
                x_hat: out.x_hat,
                inv_std: out.inv_std,
                mode,
            },
        );
        Ok((v, out.batch_stats))
    }

    pub fn concat_channels(&mut self, parts: &[Var]) -> Result<Var> {
        let values: Vec<&Tensor> = parts.iter().map(|&p| self.value(p)).collect();
        let out = layout::concat_channels(&values)?;
        Ok(self.push(out, Op::Concat { parts: parts.to_vec() }))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(x);
        layout::check_reshape(value, shape)?;
        let out = value.reshape(shape)?;
        Ok(self.push(out, Op::Reshape { x }))
    }

    pub fn permute(&mut self, x: Var, perm: &[usize]) -> Result<Var> {
        let out = layout::permute(self.value(x), perm)?;
        Ok(self.push(out, Op::Permute { x, perm: perm.to_vec() }))
    }

    /// Mean absolute difference, a scalar.
    pub fn l1_loss(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(Error::shape(
                "l1_loss",
                format!("{:?} vs {:?}", av.shape(), bv.shape()),
            ));
        }
        let mean = av
            .data()
            .iter()
            .zip(bv.data())
            .map(|(x, y)| (x - y).abs())
            .sum::<f64>()
            / av.len() as f64;
        let out = Tensor::from_parts(vec![1], vec![mean], av.dtype().join(bv.dtype()));
        Ok(self.push(out, Op::L1 { a, b }))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let out = Tensor::from_parts(vec![1], vec![v.sum()], v.dtype());
        self.push(out, Op::Sum { x })
    }

    /// Gradients of the scalar `root` with respect to every recorded node.
    pub fn backward(&self, root: Var) -> Result<Gradients> {
        let rv = self.value(root);
        if rv.len() != 1 {
            return Err(Error::shape(
                "backward",
                format!("root must be a scalar, got {:?}", rv.shape()),
            ));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; root.0 + 1];
        grads[root.0] = Some(Tensor::from_parts(rv.shape().to_vec(), vec![1.0], DType::F64));
        for i in (0..=root.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            let mut acc = |v: Var, t: Tensor| match &mut grads[v.0] {
                Some(existing) => existing.add_assign(&t),
                slot @ None => *slot = Some(t),
            };
            match &node.op {
                Op::Leaf => {}
                &Op::Conv2d { x, w, b, spec } => {
                    let r = conv2d_backward(self.value(x), self.value(w), self.value(b), spec, &g)?;
                    acc(x, r.input);
                    acc(w, r.weight);
                    acc(b, r.bias);
                }
                &Op::Sample { x, points } => {
                    let (gx, gp) = sample::bilinear_sample_backward(self.value(x), self.value(points), &g)?;
                    acc(x, gx);
                    acc(points, gp);
                }
                &Op::Unary { kind, x } => {
                    acc(x, elementwise::unary_backward(kind, self.value(x), &node.value, &g));
                }
                &Op::Binary { kind, a, b } => {
                    let (ga, gb) = elementwise::binary_backward(kind, self.value(a), self.value(b), &g);
                    acc(a, ga);
                    acc(b, gb);
                }
                &Op::Scale { x, factor } => acc(x, elementwise::scale(&g, factor)),
                &Op::GlobalPool { x } => {
                    acc(x, pool::global_avg_pool_backward(self.value(x).shape(), &g));
                }
                &Op::Downsample { x, stride } => {
                    acc(x, pool::avg_downsample_backward(self.value(x).shape(), stride, &g));
                }
                &Op::Upsample { x, factor } => {
                    acc(x, pool::bilinear_upsample_backward(self.value(x).shape(), factor, &g));
                }
                &Op::Broadcast { x } => acc(x, pool::reduce_to(&g, self.value(x).shape())),
                &Op::Linear { x, w, b } => {
                    let (gx, gw, gb) =
                        linear::fully_connected_backward(self.value(x), self.value(w), self.value(b), &g)?;
                    acc(x, gx);
                    acc(w, gw);
                    acc(b, gb);
                }
                Op::BatchNorm {
                    x,
                    gamma,
                    beta,
                    x_hat,
                    inv_std,
                    mode,
                } => {
                    let (gx, gg, gb) =
                        norm::batch_norm_backward(self.value(*gamma), x_hat, inv_std, *mode, &g);
                    acc(*x, gx);
                    acc(*gamma, gg);
                    acc(*beta, gb);
                }
                Op::Concat { parts } => {
                    let channels: Vec<usize> = parts.iter().map(|&p| self.value(p).shape()[1]).collect();
                    for (&p, gp) in parts.iter().zip(layout::split_channels(&g, &channels)) {
                        acc(p, gp);
                    }
                }
                &Op::Reshape { x } => acc(x, g.reshape(self.value(x).shape())?),
                Op::Permute { x, perm } => {
                    acc(*x, layout::permute(&g, &layout::inverse_permutation(perm))?);
                }
                &Op::L1 { a, b } => {
                    let (av, bv) = (self.value(a), self.value(b));
                    let scale = g.data()[0] / av.len() as f64;
                    let ga: Vec<f64> = av
                        .data()
                        .iter()
                        .zip(bv.data())
                        .map(|(x, y)| match x.partial_cmp(y) {
                            Some(std::cmp::Ordering::Greater) => scale,
                            Some(std::cmp::Ordering::Less) => -scale,
                            _ => 0.0,
                        })
                        .collect();
                    let gb: Vec<f64> = ga.iter().map(|v| -v).collect();
                    acc(a, Tensor::from_parts(av.shape().to_vec(), ga, DType::F64));
                    acc(b, Tensor::from_parts(bv.shape().to_vec(), gb, DType::F64));
                }
                &Op::Sum { x } => {
                    let shape = self.value(x).shape().to_vec();
                    acc(x, Tensor::full(&shape, g.data()[0]));
                }
            }
            grads[i] = Some(g);
        }
        Ok(Gradients { grads })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shared_operand_accumulates() {
        // d/dx sum(x ⊙ x) = 2x
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::new(&[3], vec![1.0, -2.0, 0.5]).unwrap());
        let y = tape.mul(x, x).unwrap();
        let s = tape.sum(y);
        let grads = tape.backward(s).unwrap();
        assert_eq!(grads.get(x).unwrap().data(), &[2.0, -4.0, 1.0]);
    }

    #[test]
    fn backward_needs_scalar_root() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::zeros(&[2]));
        assert!(tape.backward(x).is_err());
    }

    #[test]
    fn l1_gradient_is_sign_over_count() {
        let mut tape = Tape::new();
        let a = tape.leaf(Tensor::new(&[4], vec![1.0, 0.0, 2.0, 3.0]).unwrap());
        let b = tape.leaf(Tensor::new(&[4], vec![0.0, 1.0, 2.0, 1.0]).unwrap());
        let l = tape.l1_loss(a, b).unwrap();
        assert_eq!(tape.value(l).data(), &[1.0]);
        let grads = tape.backward(l).unwrap();
        assert_eq!(grads.get(a).unwrap().data(), &[0.25, -0.25, 0.0, 0.25]);
        let pair = tape.pair(a, &grads);
        assert_eq!(pair.grad.unwrap().shape(), pair.value.shape());
    }

    #[test]
    fn unused_branches_get_no_gradient() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::ones(&[2]));
        let unused = tape.leaf(Tensor::ones(&[2]));
        let s = tape.sum(x);
        let grads = tape.backward(s).unwrap();
        assert!(grads.get(unused).is_none());
    }
}
