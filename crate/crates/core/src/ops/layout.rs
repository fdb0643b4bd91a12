//! Data movement: channel concatenation and axis permutation.

use crate::error::{Error, Result};
use crate::tensor::{numel, strides, Tensor};

/// Concatenates NCHW tensors along the channel axis.
pub fn concat_channels(parts: &[&Tensor]) -> Result<Tensor> {
    let first = parts
        .first()
        .ok_or_else(|| Error::shape("concat", "no inputs"))?;
    let (n, _, h, w) = first.dims4("concat")?;
    let mut total_c = 0;
    let mut dtype = first.dtype();
    for p in parts {
        let (pn, pc, ph, pw) = p.dims4("concat")?;
        if (pn, ph, pw) != (n, h, w) {
            return Err(Error::shape(
                "concat",
                format!("{:?} vs {:?}", p.shape(), first.shape()),
            ));
        }
        total_c += pc;
        dtype = dtype.join(p.dtype());
    }
    let hw = h * w;
    let mut out = Vec::with_capacity(n * total_c * hw);
    for ni in 0..n {
        for p in parts {
            let pc = p.shape()[1];
            out.extend_from_slice(&p.data()[ni * pc * hw..][..pc * hw]);
        }
    }
    Ok(Tensor::from_parts(vec![n, total_c, h, w], out, dtype))
}

/// Splits a channel-concatenated gradient back into per-part gradients.
pub fn split_channels(grad: &Tensor, channels: &[usize]) -> Vec<Tensor> {
    let s = grad.shape();
    let (n, total, hw) = (s[0], s[1], s[2] * s[3]);
    let mut outs: Vec<Vec<f64>> = channels.iter().map(|c| Vec::with_capacity(n * c * hw)).collect();
    for ni in 0..n {
        let mut start = ni * total * hw;
        for (out, &c) in outs.iter_mut().zip(channels) {
            out.extend_from_slice(&grad.data()[start..start + c * hw]);
            start += c * hw;
        }
    }
    outs.into_iter()
        .zip(channels)
        .map(|(d, &c)| Tensor::from_parts(vec![n, c, s[2], s[3]], d, grad.dtype()))
        .collect()
}

/// Reorders axes: output axis `i` is input axis `perm[i]`.
pub fn permute(input: &Tensor, perm: &[usize]) -> Result<Tensor> {
    let rank = input.rank();
    let mut seen = vec![false; rank];
    if perm.len() != rank || perm.iter().any(|&p| p >= rank || std::mem::replace(&mut seen[p], true)) {
        return Err(Error::shape("permute", format!("{perm:?} for rank {rank}")));
    }
    let in_strides = strides(input.shape());
    let out_shape: Vec<usize> = perm.iter().map(|&p| input.shape()[p]).collect();
    let src_strides: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
    let x = input.data();
    let mut out = vec![0.0; x.len()];
    crate::ops::pool::for_each_broadcast(&out_shape, &src_strides, |i, j| out[i] = x[j]);
    Ok(Tensor::from_parts(out_shape, out, input.dtype()))
}

pub fn inverse_permutation(perm: &[usize]) -> Vec<usize> {
    let mut inv = vec![0; perm.len()];
    for (i, &p) in perm.iter().enumerate() {
        inv[p] = i;
    }
    inv
}

pub(crate) fn check_reshape(input: &Tensor, shape: &[usize]) -> Result<()> {
    if numel(shape) != input.len() {
        return Err(Error::shape(
            "reshape",
            format!("{:?} -> {shape:?}", input.shape()),
        ));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn permute_round_trips() {
        let x = Tensor::new(&[2, 3, 4], (0..24).map(f64::from).collect()).unwrap();
        let perm = [2, 0, 1];
        let y = permute(&x, &perm).unwrap();
        assert_eq!(y.shape(), &[4, 2, 3]);
        assert_eq!(y.at(&[3, 1, 2]), x.at(&[1, 2, 3]));
        let back = permute(&y, &inverse_permutation(&perm)).unwrap();
        assert_eq!(back, x);
    }

    #[test]
    fn concat_then_split() {
        let a = Tensor::new(&[2, 1, 1, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let b = Tensor::new(&[2, 2, 1, 2], (5..13).map(f64::from).collect()).unwrap();
        let c = concat_channels(&[&a, &b]).unwrap();
        assert_eq!(c.shape(), &[2, 3, 1, 2]);
        assert_eq!(c.data(), &[1.0, 2.0, 5.0, 6.0, 7.0, 8.0, 3.0, 4.0, 9.0, 10.0, 11.0, 12.0]);
        let parts = split_channels(&c, &[1, 2]);
        assert_eq!(parts[0], a);
        assert_eq!(parts[1], b);
    }
}
