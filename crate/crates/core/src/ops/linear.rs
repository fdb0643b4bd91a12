use crate::error::{Error, Result};
use crate::tensor::Tensor;

fn dims(input: &Tensor, weight: &Tensor, bias: &Tensor) -> Result<(usize, usize, usize)> {
    match (input.shape(), weight.shape()) {
        (&[n, c], &[d, wc]) if wc == c && bias.len() == d => Ok((n, c, d)),
        (x, w) => Err(Error::shape(
            "fully_connected",
            format!("input {x:?}, weight {w:?}, bias {}", bias.len()),
        )),
    }
}

/// `input` N×C, `weight` D×C, `bias` D → N×D.
pub fn fully_connected(input: &Tensor, weight: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let (n, c, d) = dims(input, weight, bias)?;
    let (x, w, b) = (input.data(), weight.data(), bias.data());
    let mut out = Vec::with_capacity(n * d);
    for row in x.chunks_exact(c) {
        for (wr, &bv) in w.chunks_exact(c).zip(b) {
            out.push(bv + row.iter().zip(wr).map(|(a, b)| a * b).sum::<f64>());
        }
    }
    Ok(Tensor::from_parts(vec![n, d], out, input.dtype().join(weight.dtype())))
}

pub fn fully_connected_backward(
    input: &Tensor,
    weight: &Tensor,
    bias: &Tensor,
    grad_out: &Tensor,
) -> Result<(Tensor, Tensor, Tensor)> {
    let (n, c, d) = dims(input, weight, bias)?;
    let (x, w, g) = (input.data(), weight.data(), grad_out.data());
    let mut gx = vec![0.0; n * c];
    let mut gw = vec![0.0; d * c];
    let mut gb = vec![0.0; d];
    for i in 0..n {
        for j in 0..d {
            let gv = g[i * d + j];
            gb[j] += gv;
            for k in 0..c {
                gx[i * c + k] += gv * w[j * c + k];
                gw[j * c + k] += gv * x[i * c + k];
            }
        }
    }
    let dt = grad_out.dtype();
    Ok((
        Tensor::from_parts(vec![n, c], gx, dt),
        Tensor::from_parts(vec![d, c], gw, dt),
        Tensor::from_parts(bias.shape().to_vec(), gb, dt),
    ))
}
