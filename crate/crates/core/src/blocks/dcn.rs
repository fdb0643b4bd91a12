//! Deformable convolution (v1, no modulation).
//!
//! A 3×3 conv predicts `2·K·K` offset channels, laid out as `(dy, dx)`
//! pairs per kernel tap in row-major tap order. Tap `k` of output pixel `p`
//! samples the input bilinearly at `p − pad + grid_k + offset_k(p)`; the
//! sampled columns are then contracted with the K×K weights. With all
//! offsets zero every sample lands on an integer pixel and the result is
//! exactly the standard convolution.

use crate::autodiff::Var;
use crate::blocks::{Conv, Forward};
use crate::error::{Error, Result};
use crate::ops::conv::Conv2dSpec;
use crate::params::{ParamId, ParamStore};
use crate::tensor::Tensor;

pub const OFFSET_KERNEL: usize = 3;

#[derive(Clone, Debug)]
pub struct Dcn {
    pub offset: Conv,
    pub weight: ParamId,
    pub bias: ParamId,
    pub kernel: usize,
    pub channels: usize,
}

/// Integer sampling positions of a same-padded K×K kernel, shaped
/// `1 × K² × H × W × 2`.
pub fn dcn_base_grid(kernel: usize, height: usize, width: usize) -> Tensor {
    let pad = (kernel / 2) as f64;
    let mut data = Vec::with_capacity(kernel * kernel * height * width * 2);
    for ky in 0..kernel {
        for kx in 0..kernel {
            for y in 0..height {
                for x in 0..width {
                    data.push(y as f64 - pad + ky as f64);
                    data.push(x as f64 - pad + kx as f64);
                }
            }
        }
    }
    Tensor::new(&[1, kernel * kernel, height, width, 2], data).expect("grid extents")
}

impl Dcn {
    /// Offset conv starts at zero so a fresh layer is a plain convolution.
    pub fn new(store: &mut ParamStore, name: &str, channels: usize, kernel: usize) -> Self {
        let taps = kernel * kernel;
        let offset = Conv {
            weight: store.add(
                format!("{name}.offset.weight"),
                Tensor::zeros(&[2 * taps, channels, OFFSET_KERNEL, OFFSET_KERNEL]),
            ),
            bias: store.add(format!("{name}.offset.bias"), Tensor::zeros(&[2 * taps])),
            spec: Conv2dSpec::same(OFFSET_KERNEL, 1),
            kernel: OFFSET_KERNEL,
        };
        let fan_in = channels * taps;
        Dcn {
            offset,
            weight: store.add_uniform(format!("{name}.weight"), &[channels, channels, kernel, kernel], fan_in),
            bias: store.add_uniform(format!("{name}.bias"), &[channels], fan_in),
            kernel,
            channels,
        }
    }

    pub fn forward(&self, f: &mut Forward<'_>, x: Var) -> Result<Var> {
        let (n, c, h, w) = f.tape.value(x).dims4("dcn")?;
        if c != self.channels {
            return Err(Error::shape("dcn", format!("expected {} channels, got {c}", self.channels)));
        }
        let taps = self.kernel * self.kernel;
        let off = self.offset.forward(f, x)?;
        let off = f.tape.reshape(off, &[n, taps, 2, h, w])?;
        let off = f.tape.permute(off, &[0, 1, 3, 4, 2])?;
        let grid = f.tape.leaf(dcn_base_grid(self.kernel, h, w));
        let points = f.tape.add(off, grid)?;
        let points = f.tape.reshape(points, &[n, taps * h, w, 2])?;
        let cols = f.tape.bilinear_sample(x, points)?;
        let cols = f.tape.reshape(cols, &[n, c * taps, h, w])?;
        let weight = f.param(self.weight);
        let weight = f.tape.reshape(weight, &[self.channels, c * taps, 1, 1])?;
        let bias = f.param(self.bias);
        f.tape.conv2d(cols, weight, bias, Conv2dSpec::default())
    }
}
