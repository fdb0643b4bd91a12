use crate::error::{Error, Result};
use crate::ops::pool::{broadcast_strides, broadcastable, for_each_broadcast, reduce_to};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Unary {
    Relu,
    Sigmoid,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Binary {
    Add,
    Mul,
}

pub fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

pub fn unary(kind: Unary, x: &Tensor) -> Tensor {
    match kind {
        Unary::Relu => x.map(|v| v.max(0.0)),
        Unary::Sigmoid => x.map(sigmoid),
    }
}

/// `output` is the forward result, reused by the sigmoid derivative.
pub fn unary_backward(kind: Unary, x: &Tensor, output: &Tensor, grad_out: &Tensor) -> Tensor {
    let g = grad_out.data();
    let data = match kind {
        Unary::Relu => x
            .data()
            .iter()
            .zip(g)
            .map(|(&v, &g)| if v > 0.0 { g } else { 0.0 })
            .collect(),
        Unary::Sigmoid => output
            .data()
            .iter()
            .zip(g)
            .map(|(&s, &g)| g * s * (1.0 - s))
            .collect(),
    };
    Tensor::from_parts(x.shape().to_vec(), data, grad_out.dtype())
}

/// `a ∘ b` where `b` is either the same shape as `a` or broadcasts to it
/// (extent 1 on any axis, e.g. a N×1×H×W map against N×C×H×W features).
pub fn binary(kind: Binary, a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if !broadcastable(b.shape(), a.shape()) {
        return Err(Error::shape(
            match kind {
                Binary::Add => "add",
                Binary::Mul => "mul",
            },
            format!("{:?} does not broadcast to {:?}", b.shape(), a.shape()),
        ));
    }
    let (ad, bd) = (a.data(), b.data());
    let mut out = vec![0.0; ad.len()];
    let bs = broadcast_strides(b.shape(), a.shape());
    match kind {
        Binary::Add => for_each_broadcast(a.shape(), &bs, |i, j| out[i] = ad[i] + bd[j]),
        Binary::Mul => for_each_broadcast(a.shape(), &bs, |i, j| out[i] = ad[i] * bd[j]),
    }
    Ok(Tensor::from_parts(
        a.shape().to_vec(),
        out,
        a.dtype().join(b.dtype()),
    ))
}

pub fn binary_backward(kind: Binary, a: &Tensor, b: &Tensor, grad_out: &Tensor) -> (Tensor, Tensor) {
    match kind {
        Binary::Add => (grad_out.clone(), reduce_to(grad_out, b.shape())),
        Binary::Mul => {
            let bs = broadcast_strides(b.shape(), a.shape());
            let (ad, bd, g) = (a.data(), b.data(), grad_out.data());
            let mut ga = vec![0.0; ad.len()];
            let mut gb = vec![0.0; bd.len()];
            for_each_broadcast(a.shape(), &bs, |i, j| {
                ga[i] = g[i] * bd[j];
                gb[j] += g[i] * ad[i];
            });
            (
                Tensor::from_parts(a.shape().to_vec(), ga, grad_out.dtype()),
                Tensor::from_parts(b.shape().to_vec(), gb, grad_out.dtype()),
            )
        }
    }
}

pub fn scale(x: &Tensor, factor: f64) -> Tensor {
    x.map(|v| v * factor)
}
