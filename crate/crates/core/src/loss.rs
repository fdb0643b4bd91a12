//! Composite training objective `L = L_det + λ1·L_depth + λ2·L_roa`.
//!
//! Detection and depth terms come from outside this crate and enter as
//! plain scalars; the ROA term is the L1 distance between predicted and
//! label maps.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    /// Depth-loss weight λ1.
    pub lambda1: f64,
    /// ROA-loss weight λ2.
    pub lambda2: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            lambda1: 3.0,
            lambda2: 1.0,
        }
    }
}

impl LossWeights {
    pub fn new(lambda1: f64, lambda2: f64) -> Result<Self> {
        if !(lambda1 >= 0.0 && lambda2 >= 0.0 && lambda1.is_finite() && lambda2.is_finite()) {
            return Err(Error::Config(format!(
                "loss weights must be finite and non-negative, got {lambda1}, {lambda2}"
            )));
        }
        Ok(LossWeights { lambda1, lambda2 })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossReport {
    pub l_det: f64,
    pub l_depth: f64,
    pub l_roa: f64,
    pub total: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Reduction {
    #[default]
    Mean,
    Sum,
}

/// L1 distance between two maps of identical shape.
pub fn roa_loss(pred: &Tensor, label: &Tensor, reduction: Reduction) -> Result<f64> {
    if pred.shape() != label.shape() {
        return Err(Error::shape(
            "roa_loss",
            format!("{:?} vs {:?}", pred.shape(), label.shape()),
        ));
    }
    let sum: f64 = pred
        .data()
        .iter()
        .zip(label.data())
        .map(|(a, b)| (a - b).abs())
        .sum();
    Ok(match reduction {
        Reduction::Mean => sum / pred.len() as f64,
        Reduction::Sum => sum,
    })
}

pub fn total_loss(l_det: f64, l_depth: f64, l_roa: f64, w: &LossWeights) -> Result<LossReport> {
    for (name, v) in [("l_det", l_det), ("l_depth", l_depth), ("l_roa", l_roa)] {
        if !v.is_finite() {
            return Err(Error::NonFinite(name));
        }
    }
    Ok(LossReport {
        l_det,
        l_depth,
        l_roa,
        total: l_det + w.lambda1 * l_depth + w.lambda2 * l_roa,
    })
}
