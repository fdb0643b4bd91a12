//! Per-channel batch normalization over N, H and W.

use crate::error::{Error, Result};
use crate::tensor::{DType, Tensor};

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum NormMode {
    /// Batch statistics; running statistics are updated.
    #[default]
    Train,
    /// Running statistics.
    Eval,
    /// Pass-through. Used by gradient checks and neutral settings.
    Identity,
}

/// Forward result; `x_hat` and `inv_std` are kept for the backward pass.
pub struct BatchNormOut {
    pub output: Tensor,
    pub x_hat: Tensor,
    pub inv_std: Vec<f64>,
    /// Batch mean and unbiased variance in train mode.
    pub batch_stats: Option<(Vec<f64>, Vec<f64>)>,
}

#[derive(Clone, Copy, Debug)]
pub struct RunningStats<'a> {
    pub mean: &'a Tensor,
    pub var: &'a Tensor,
}

pub fn batch_norm(
    input: &Tensor,
    gamma: &Tensor,
    beta: &Tensor,
    running: RunningStats<'_>,
    mode: NormMode,
) -> Result<BatchNormOut> {
    let (n, c, h, w) = input.dims4("batch_norm")?;
    for (name, t) in [
        ("gamma", gamma),
        ("beta", beta),
        ("running_mean", running.mean),
        ("running_var", running.var),
    ] {
        if t.len() != c {
            return Err(Error::shape(
                "batch_norm",
                format!("{name} has {} entries for {c} channels", t.len()),
            ));
        }
    }
    if mode == NormMode::Identity {
        return Ok(BatchNormOut {
            output: input.clone(),
            x_hat: input.clone(),
            inv_std: vec![1.0; c],
            batch_stats: None,
        });
    }
    let hw = h * w;
    let m = (n * hw) as f64;
    let x = input.data();
    let plane = |ni: usize, ci: usize| &x[(ni * c + ci) * hw..][..hw];
    let (mean, var, batch_stats) = match mode {
        NormMode::Train => {
            let mut mean = vec![0.0; c];
            let mut var = vec![0.0; c];
            for ci in 0..c {
                let s: f64 = (0..n).map(|ni| plane(ni, ci).iter().sum::<f64>()).sum();
                mean[ci] = s / m;
                let ss: f64 = (0..n)
                    .map(|ni| plane(ni, ci).iter().map(|v| (v - mean[ci]).powi(2)).sum::<f64>())
                    .sum();
                var[ci] = ss / m;
            }
            let unbiased = var
                .iter()
                .map(|v| if m > 1.0 { v * m / (m - 1.0) } else { *v })
                .collect();
            (mean.clone(), var, Some((mean, unbiased)))
        }
        _ => (running.mean.data().to_vec(), running.var.data().to_vec(), None),
    };
    let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + BN_EPS).sqrt()).collect();
    let mut x_hat = vec![0.0; x.len()];
    let mut out = vec![0.0; x.len()];
    for ni in 0..n {
        for ci in 0..c {
            let off = (ni * c + ci) * hw;
            let (g, b) = (gamma.data()[ci], beta.data()[ci]);
            for i in off..off + hw {
                let xh = (x[i] - mean[ci]) * inv_std[ci];
                x_hat[i] = xh;
                out[i] = g * xh + b;
            }
        }
    }
    let shape = input.shape().to_vec();
    Ok(BatchNormOut {
        output: Tensor::from_parts(shape.clone(), out, input.dtype()),
        x_hat: Tensor::from_parts(shape, x_hat, DType::F64),
        inv_std,
        batch_stats,
    })
}

/// Gradients with respect to input, gamma and beta.
pub fn batch_norm_backward(
    gamma: &Tensor,
    x_hat: &Tensor,
    inv_std: &[f64],
    mode: NormMode,
    grad_out: &Tensor,
) -> (Tensor, Tensor, Tensor) {
    let shape = grad_out.shape().to_vec();
    let (n, c, h, w) = (shape[0], shape[1], shape[2], shape[3]);
    let hw = h * w;
    let g = grad_out.data();
    let xh = x_hat.data();
    let dt = grad_out.dtype();
    if mode == NormMode::Identity {
        return (
            grad_out.clone(),
            Tensor::from_parts(vec![c], vec![0.0; c], dt),
            Tensor::from_parts(vec![c], vec![0.0; c], dt),
        );
    }
    let mut gx = vec![0.0; g.len()];
    let mut ggamma = vec![0.0; c];
    let mut gbeta = vec![0.0; c];
    let m = (n * hw) as f64;
    for ci in 0..c {
        let (mut sg, mut sgx) = (0.0, 0.0);
        for ni in 0..n {
            let off = (ni * c + ci) * hw;
            for i in off..off + hw {
                sg += g[i];
                sgx += g[i] * xh[i];
            }
        }
        gbeta[ci] = sg;
        ggamma[ci] = sgx;
        let gm = gamma.data()[ci];
        let k = gm * inv_std[ci];
        for ni in 0..n {
            let off = (ni * c + ci) * hw;
            for i in off..off + hw {
                gx[i] = match mode {
                    NormMode::Train => k * (g[i] - sg / m - xh[i] * sgx / m),
                    _ => k * g[i],
                };
            }
        }
    }
    (
        Tensor::from_parts(shape, gx, dt),
        Tensor::from_parts(vec![c], ggamma, dt),
        Tensor::from_parts(vec![c], gbeta, dt),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn stats(c: usize) -> (Tensor, Tensor) {
        (Tensor::zeros(&[c]), Tensor::ones(&[c]))
    }

    #[test]
    fn identity_mode_passes_through() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = Tensor::uniform(&[2, 3, 4, 4], -2.0, 2.0, &mut rng);
        let (rm, rv) = stats(3);
        let out = batch_norm(
            &x,
            &Tensor::full(&[3], 5.0),
            &Tensor::full(&[3], 1.0),
            RunningStats { mean: &rm, var: &rv },
            NormMode::Identity,
        )
        .unwrap();
        assert_eq!(out.output, x);
    }

    #[test]
    fn constant_channel_collapses_to_beta() {
        let mut data = vec![0.0; 2 * 2 * 3 * 3];
        for (i, v) in data.iter_mut().enumerate() {
            *v = if (i / 9) % 2 == 0 { 4.0 } else { -1.5 };
        }
        let x = Tensor::new(&[2, 2, 3, 3], data).unwrap();
        let beta = Tensor::new(&[2], vec![0.3, -0.7]).unwrap();
        let (rm, rv) = stats(2);
        let out = batch_norm(&x, &Tensor::full(&[2], 2.0), &beta, RunningStats { mean: &rm, var: &rv }, NormMode::Train)
            .unwrap();
        for (i, v) in out.output.data().iter().enumerate() {
            let expect = beta.data()[(i / 9) % 2];
            assert!((v - expect).abs() < 1e-9, "{v} vs {expect}");
        }
    }

    #[test]
    fn train_mode_standardizes_each_channel() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x = Tensor::uniform(&[3, 4, 5, 6], -3.0, 5.0, &mut rng);
        let (rm, rv) = stats(4);
        let out = batch_norm(&x, &Tensor::ones(&[4]), &Tensor::zeros(&[4]), RunningStats { mean: &rm, var: &rv }, NormMode::Train)
            .unwrap();
        let y = out.output.data();
        for ci in 0..4 {
            let vals: Vec<f64> = (0..3)
                .flat_map(|ni| y[(ni * 4 + ci) * 30..][..30].to_vec())
                .collect();
            let mean = vals.iter().sum::<f64>() / vals.len() as f64;
            let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / vals.len() as f64;
            assert!(mean.abs() < 1e-5);
            // eps in the denominator pulls the variance slightly below 1.
            assert!((var - 1.0).abs() < 1e-5, "var {var}");
        }
    }

    #[test]
    fn parameter_length_must_match_channels() {
        let x = Tensor::zeros(&[1, 3, 2, 2]);
        let (rm, rv) = stats(3);
        let res = batch_norm(&x, &Tensor::ones(&[2]), &Tensor::zeros(&[3]), RunningStats { mean: &rm, var: &rv }, NormMode::Eval);
        assert!(res.is_err());
    }
}
