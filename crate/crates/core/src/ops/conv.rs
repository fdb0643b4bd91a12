//! Direct 2D cross-correlation.
//!
//! Every output element accumulates `bias + Σ_c Σ_ky Σ_kx x·w` in exactly
//! that order, skipping taps that land in the zero padding. Keeping the
//! order fixed makes the result reproducible and lets the direct-summation
//! oracle match it bit for bit in double precision.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Conv2dSpec {
    pub stride: usize,
    pub padding: usize,
    pub dilation: usize,
}

impl Default for Conv2dSpec {
    fn default() -> Self {
        Conv2dSpec {
            stride: 1,
            padding: 0,
            dilation: 1,
        }
    }
}

impl Conv2dSpec {
    pub fn new(stride: usize, padding: usize, dilation: usize) -> Self {
        Conv2dSpec {
            stride,
            padding,
            dilation,
        }
    }

    /// Same-padding spec for an odd kernel at stride 1.
    pub fn same(kernel: usize, dilation: usize) -> Self {
        Conv2dSpec::new(1, dilation * (kernel - 1) / 2, dilation)
    }

    pub fn output_extent(&self, input: usize, kernel: usize) -> Option<usize> {
        let span = self.dilation * (kernel - 1) + 1;
        let padded = input + 2 * self.padding;
        if self.stride == 0 || self.dilation == 0 || padded < span {
            return None;
        }
        Some((padded - span) / self.stride + 1)
    }
}

struct Geometry {
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    o: usize,
    k: usize,
    oh: usize,
    ow: usize,
}

fn geometry(input: &Tensor, weight: &Tensor, bias: &Tensor, spec: Conv2dSpec) -> Result<Geometry> {
    let (n, c, h, w) = input.dims4("conv2d")?;
    let (o, wc, kh, kw) = weight.dims4("conv2d")?;
    if wc != c {
        return Err(Error::shape(
            "conv2d",
            format!("input has {c} channels, weight expects {wc}"),
        ));
    }
    if kh != kw {
        return Err(Error::shape("conv2d", format!("non-square kernel {kh}x{kw}")));
    }
    if bias.len() != o {
        return Err(Error::shape(
            "conv2d",
            format!("bias has {} entries for {o} output channels", bias.len()),
        ));
    }
    let (oh, ow) = match (spec.output_extent(h, kh), spec.output_extent(w, kw)) {
        (Some(oh), Some(ow)) if oh >= 1 && ow >= 1 => (oh, ow),
        _ => {
            return Err(Error::EmptyOutput {
                op: "conv2d",
                detail: format!("input {h}x{w}, kernel {kh}, spec {spec:?}"),
            })
        }
    };
    Ok(Geometry {
        n,
        c,
        h,
        w,
        o,
        k: kh,
        oh,
        ow,
    })
}

/// Output positions `lo..hi` whose tap `out*stride + offset` lands inside `0..extent`.
fn valid_range(offset: isize, stride: usize, extent: usize, out: usize) -> (usize, usize) {
    let s = stride as isize;
    let lo = if offset >= 0 { 0 } else { (-offset + s - 1) / s };
    let last = extent as isize - 1 - offset;
    let hi = if last < 0 { 0 } else { (last / s + 1).min(out as isize) };
    let lo = lo.min(out as isize);
    (lo as usize, hi.max(lo) as usize)
}

pub fn conv2d(input: &Tensor, weight: &Tensor, bias: &Tensor, spec: Conv2dSpec) -> Result<Tensor> {
    let g = geometry(input, weight, bias, spec)?;
    let (x, wt, b) = (input.data(), weight.data(), bias.data());
    let plane = g.oh * g.ow;
    let mut out = vec![0.0; g.n * g.o * plane];
    for ni in 0..g.n {
        for oc in 0..g.o {
            let dst = &mut out[(ni * g.o + oc) * plane..][..plane];
            dst.fill(b[oc]);
            for ci in 0..g.c {
                let src = &x[(ni * g.c + ci) * g.h * g.w..][..g.h * g.w];
                for ky in 0..g.k {
                    let oy_off = (ky * spec.dilation) as isize - spec.padding as isize;
                    let (oy_lo, oy_hi) = valid_range(oy_off, spec.stride, g.h, g.oh);
                    for kx in 0..g.k {
                        let wv = wt[((oc * g.c + ci) * g.k + ky) * g.k + kx];
                        let ox_off = (kx * spec.dilation) as isize - spec.padding as isize;
                        let (ox_lo, ox_hi) = valid_range(ox_off, spec.stride, g.w, g.ow);
                        if ox_lo == ox_hi {
                            continue;
                        }
                        for oy in oy_lo..oy_hi {
                            let iy = (oy * spec.stride) as isize + oy_off;
                            let row = &src[iy as usize * g.w..][..g.w];
                            let drow = &mut dst[oy * g.ow..][..g.ow];
                            if spec.stride == 1 {
                                let base = ox_off + ox_lo as isize;
                                let srow = &row[base as usize..][..ox_hi - ox_lo];
                                for (d, s) in drow[ox_lo..ox_hi].iter_mut().zip(srow) {
                                    *d += s * wv;
                                }
                            } else {
                                for ox in ox_lo..ox_hi {
                                    let ix = (ox * spec.stride) as isize + ox_off;
                                    drow[ox] += row[ix as usize] * wv;
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    let dtype = input.dtype().join(weight.dtype());
    Ok(Tensor::from_parts(vec![g.n, g.o, g.oh, g.ow], out, dtype))
}

pub struct Conv2dGrads {
    pub input: Tensor,
    pub weight: Tensor,
    pub bias: Tensor,
}

pub fn conv2d_backward(
    input: &Tensor,
    weight: &Tensor,
    bias: &Tensor,
    spec: Conv2dSpec,
    grad_out: &Tensor,
) -> Result<Conv2dGrads> {
    let g = geometry(input, weight, bias, spec)?;
    if grad_out.shape() != [g.n, g.o, g.oh, g.ow] {
        return Err(Error::shape("conv2d_backward", "gradient shape"));
    }
    let (x, wt, go) = (input.data(), weight.data(), grad_out.data());
    let plane = g.oh * g.ow;
    let mut gx = vec![0.0; x.len()];
    let mut gw = vec![0.0; wt.len()];
    let mut gb = vec![0.0; g.o];
    for ni in 0..g.n {
        for oc in 0..g.o {
            let gplane = &go[(ni * g.o + oc) * plane..][..plane];
            gb[oc] += gplane.iter().sum::<f64>();
            for ci in 0..g.c {
                let base = (ni * g.c + ci) * g.h * g.w;
                for ky in 0..g.k {
                    let oy_off = (ky * spec.dilation) as isize - spec.padding as isize;
                    let (oy_lo, oy_hi) = valid_range(oy_off, spec.stride, g.h, g.oh);
                    for kx in 0..g.k {
                        let widx = ((oc * g.c + ci) * g.k + ky) * g.k + kx;
                        let wv = wt[widx];
                        let ox_off = (kx * spec.dilation) as isize - spec.padding as isize;
                        let (ox_lo, ox_hi) = valid_range(ox_off, spec.stride, g.w, g.ow);
                        if ox_lo == ox_hi {
                            continue;
                        }
                        let mut acc = 0.0;
                        for oy in oy_lo..oy_hi {
                            let iy = ((oy * spec.stride) as isize + oy_off) as usize;
                            let grow = &gplane[oy * g.ow..][..g.ow];
                            let row = base + iy * g.w;
                            if spec.stride == 1 {
                                let start = (ox_off + ox_lo as isize) as usize;
                                let len = ox_hi - ox_lo;
                                let xs = &x[row + start..][..len];
                                let gxs = &mut gx[row + start..][..len];
                                for ((gxv, &xv), &gv) in gxs.iter_mut().zip(xs).zip(&grow[ox_lo..ox_hi]) {
                                    *gxv += gv * wv;
                                    acc += gv * xv;
                                }
                            } else {
                                for ox in ox_lo..ox_hi {
                                    let ix = ((ox * spec.stride) as isize + ox_off) as usize;
                                    gx[row + ix] += grow[ox] * wv;
                                    acc += grow[ox] * x[row + ix];
                                }
                            }
                        }
                        gw[widx] += acc;
                    }
                }
            }
        }
    }
    Ok(Conv2dGrads {
        input: Tensor::from_parts(input.shape().to_vec(), gx, input.dtype()),
        weight: Tensor::from_parts(weight.shape().to_vec(), gw, weight.dtype()),
        bias: Tensor::from_parts(bias.shape().to_vec(), gb, bias.dtype()),
    })
}
