//! Pooling and resampling: global average pooling, block-average
//! downsampling, align-corners-false bilinear upsampling and broadcasting.

use crate::error::{Error, Result};
use crate::tensor::{numel, strides, Tensor};

pub fn global_avg_pool(input: &Tensor) -> Result<Tensor> {
    let (n, c, h, w) = input.dims4("global_avg_pool")?;
    let hw = h * w;
    let out = input
        .data()
        .chunks_exact(hw)
        .map(|plane| plane.iter().sum::<f64>() / hw as f64)
        .collect();
    Ok(Tensor::from_parts(vec![n, c, 1, 1], out, input.dtype()))
}

pub fn global_avg_pool_backward(input_shape: &[usize], grad_out: &Tensor) -> Tensor {
    let hw = input_shape[2] * input_shape[3];
    let data = grad_out
        .data()
        .iter()
        .flat_map(|&g| std::iter::repeat_n(g / hw as f64, hw))
        .collect();
    Tensor::from_parts(input_shape.to_vec(), data, grad_out.dtype())
}

pub fn avg_downsample(input: &Tensor, stride: usize) -> Result<Tensor> {
    let (n, c, h, w) = input.dims4("avg_downsample")?;
    for extent in [h, w] {
        if stride == 0 || extent % stride != 0 {
            return Err(Error::IndivisibleExtent { extent, stride });
        }
    }
    let (oh, ow) = (h / stride, w / stride);
    let norm = (stride * stride) as f64;
    let x = input.data();
    let mut out = vec![0.0; n * c * oh * ow];
    for (plane, dst) in x.chunks_exact(h * w).zip(out.chunks_exact_mut(oh * ow)) {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut acc = 0.0;
                for dy in 0..stride {
                    let row = &plane[(oy * stride + dy) * w + ox * stride..][..stride];
                    acc += row.iter().sum::<f64>();
                }
                dst[oy * ow + ox] = acc / norm;
            }
        }
    }
    Ok(Tensor::from_parts(vec![n, c, oh, ow], out, input.dtype()))
}

pub fn avg_downsample_backward(input_shape: &[usize], stride: usize, grad_out: &Tensor) -> Tensor {
    let (h, w) = (input_shape[2], input_shape[3]);
    let (oh, ow) = (h / stride, w / stride);
    let norm = (stride * stride) as f64;
    let mut gx = vec![0.0; numel(input_shape)];
    for (gplane, dst) in grad_out.data().chunks_exact(oh * ow).zip(gx.chunks_exact_mut(h * w)) {
        for y in 0..h {
            for x in 0..w {
                dst[y * w + x] = gplane[(y / stride) * ow + x / stride] / norm;
            }
        }
    }
    Tensor::from_parts(input_shape.to_vec(), gx, grad_out.dtype())
}

/// Source taps for one output coordinate of an align-corners-false resize.
#[derive(Clone, Copy, Debug)]
struct Lerp {
    lo: usize,
    hi: usize,
    frac: f64,
}

fn lerp_table(input: usize, output: usize) -> Vec<Lerp> {
    let scale = input as f64 / output as f64;
    (0..output)
        .map(|o| {
            let src = ((o as f64 + 0.5) * scale - 0.5).max(0.0);
            let lo = (src.floor() as usize).min(input - 1);
            let hi = (lo + 1).min(input - 1);
            Lerp {
                lo,
                hi,
                frac: src - lo as f64,
            }
        })
        .collect()
}

pub fn bilinear_upsample(input: &Tensor, factor: usize) -> Result<Tensor> {
    let (n, c, h, w) = input.dims4("bilinear_upsample")?;
    if factor == 0 {
        return Err(Error::shape("bilinear_upsample", "factor must be positive"));
    }
    let (oh, ow) = (h * factor, w * factor);
    let (ty, tx) = (lerp_table(h, oh), lerp_table(w, ow));
    let x = input.data();
    let mut out = vec![0.0; n * c * oh * ow];
    for (plane, dst) in x.chunks_exact(h * w).zip(out.chunks_exact_mut(oh * ow)) {
        for (oy, ly) in ty.iter().enumerate() {
            let (r0, r1) = (&plane[ly.lo * w..][..w], &plane[ly.hi * w..][..w]);
            for (ox, lx) in tx.iter().enumerate() {
                let top = r0[lx.lo] + (r0[lx.hi] - r0[lx.lo]) * lx.frac;
                let bot = r1[lx.lo] + (r1[lx.hi] - r1[lx.lo]) * lx.frac;
                dst[oy * ow + ox] = top + (bot - top) * ly.frac;
            }
        }
    }
    Ok(Tensor::from_parts(vec![n, c, oh, ow], out, input.dtype()))
}

pub fn bilinear_upsample_backward(input_shape: &[usize], factor: usize, grad_out: &Tensor) -> Tensor {
    let (h, w) = (input_shape[2], input_shape[3]);
    let (oh, ow) = (h * factor, w * factor);
    let (ty, tx) = (lerp_table(h, oh), lerp_table(w, ow));
    let mut gx = vec![0.0; numel(input_shape)];
    for (gplane, dst) in grad_out.data().chunks_exact(oh * ow).zip(gx.chunks_exact_mut(h * w)) {
        for (oy, ly) in ty.iter().enumerate() {
            for (ox, lx) in tx.iter().enumerate() {
                let g = gplane[oy * ow + ox];
                let (gt, gb) = (g * (1.0 - ly.frac), g * ly.frac);
                dst[ly.lo * w + lx.lo] += gt * (1.0 - lx.frac);
                dst[ly.lo * w + lx.hi] += gt * lx.frac;
                dst[ly.hi * w + lx.lo] += gb * (1.0 - lx.frac);
                dst[ly.hi * w + lx.hi] += gb * lx.frac;
            }
        }
    }
    Tensor::from_parts(input_shape.to_vec(), gx, grad_out.dtype())
}

/// Whether `from` broadcasts to `to`: same rank, every extent equal or 1.
pub fn broadcastable(from: &[usize], to: &[usize]) -> bool {
    from.len() == to.len() && from.iter().zip(to).all(|(&f, &t)| f == t || f == 1)
}

/// Strides for reading a `from`-shaped tensor while iterating `to` (0 on broadcast axes).
pub(crate) fn broadcast_strides(from: &[usize], to: &[usize]) -> Vec<usize> {
    strides(from)
        .into_iter()
        .zip(from.iter().zip(to))
        .map(|(s, (&f, &t))| if f == t { s } else { 0 })
        .collect()
}

/// Visits every index of `shape` in row-major order together with the
/// matching offset under `bstrides`.
pub(crate) fn for_each_broadcast(shape: &[usize], bstrides: &[usize], mut f: impl FnMut(usize, usize)) {
    let total = numel(shape);
    let rank = shape.len();
    let mut idx = vec![0usize; rank];
    let mut boff = 0usize;
    for flat in 0..total {
        f(flat, boff);
        for d in (0..rank).rev() {
            idx[d] += 1;
            boff += bstrides[d];
            if idx[d] < shape[d] {
                break;
            }
            boff -= bstrides[d] * shape[d];
            idx[d] = 0;
        }
    }
}

pub fn broadcast_to(input: &Tensor, shape: &[usize]) -> Result<Tensor> {
    if !broadcastable(input.shape(), shape) {
        return Err(Error::shape(
            "broadcast_to",
            format!("{:?} -> {shape:?}", input.shape()),
        ));
    }
    let bs = broadcast_strides(input.shape(), shape);
    let x = input.data();
    let mut out = vec![0.0; numel(shape)];
    for_each_broadcast(shape, &bs, |i, j| out[i] = x[j]);
    Ok(Tensor::from_parts(shape.to_vec(), out, input.dtype()))
}

/// Sums `grad` (shaped like the broadcast result) back onto `shape`.
pub fn reduce_to(grad: &Tensor, shape: &[usize]) -> Tensor {
    if grad.shape() == shape {
        return grad.clone();
    }
    let bs = broadcast_strides(shape, grad.shape());
    let g = grad.data();
    let mut out = vec![0.0; numel(shape)];
    for_each_broadcast(grad.shape(), &bs, |i, j| out[j] += g[i]);
    Tensor::from_parts(shape.to_vec(), out, grad.dtype())
}
