//! Adam with bias correction.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for Adam {
    fn default() -> Self {
        Adam {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
}

impl AdamState {
    pub fn new(params: &[Tensor]) -> Self {
        AdamState {
            step: 0,
            m: params.iter().map(|p| Tensor::zeros(p.shape())).collect(),
            v: params.iter().map(|p| Tensor::zeros(p.shape())).collect(),
        }
    }

    /// Flattens into named tensors for a checkpoint.
    pub fn to_named(&self) -> BTreeMap<String, Tensor> {
        let mut out = BTreeMap::new();
        out.insert("adam.step".to_string(), Tensor::scalar(self.step as f64));
        for (i, (m, v)) in self.m.iter().zip(&self.v).enumerate() {
            out.insert(format!("adam.m.{i:04}"), m.clone());
            out.insert(format!("adam.v.{i:04}"), v.clone());
        }
        out
    }

    pub fn from_named(named: &BTreeMap<String, Tensor>, params: &[Tensor]) -> Result<Self> {
        let missing = |k: &str| Error::Format(format!("checkpoint lacks optimizer entry {k}"));
        let step = named.get("adam.step").ok_or_else(|| missing("adam.step"))?.data()[0] as u64;
        let mut state = AdamState::new(params);
        state.step = step;
        for (i, p) in params.iter().enumerate() {
            for (prefix, slot) in [("m", &mut state.m[i]), ("v", &mut state.v[i])] {
                let key = format!("adam.{prefix}.{i:04}");
                let t = named.get(&key).ok_or_else(|| missing(&key))?;
                if t.shape() != p.shape() {
                    return Err(Error::Format(format!("{key} has the wrong shape")));
                }
                *slot = t.clone();
            }
        }
        Ok(state)
    }
}

impl Adam {
    /// One update of every parameter. Moments stay in double precision;
    /// parameters keep their own dtype.
    pub fn step(&self, params: &mut [Tensor], grads: &[Tensor], state: &mut AdamState) -> Result<()> {
        if params.len() != grads.len() || params.len() != state.m.len() {
            return Err(Error::shape(
                "optimizer_step",
                format!("{} params, {} grads, {} moments", params.len(), grads.len(), state.m.len()),
            ));
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.shape() != g.shape() {
                return Err(Error::shape(
                    "optimizer_step",
                    format!("param {i}: {:?} vs grad {:?}", p.shape(), g.shape()),
                ));
            }
        }
        state.step += 1;
        let t = state.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let (m, v) = (state.m[i].data_mut(), state.v[i].data_mut());
            let mut next = p.data().to_vec();
            for (j, (pv, &gv)) in next.iter_mut().zip(g.data()).enumerate() {
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * gv;
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * gv * gv;
                let m_hat = m[j] / c1;
                let v_hat = v[j] / c2;
                *pv -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
            *p = Tensor::from_parts(p.shape().to_vec(), next, p.dtype());
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_params() {
        let mut params = vec![Tensor::new(&[3], vec![1.0, -2.0, 0.5]).unwrap()];
        let before = params.clone();
        let mut state = AdamState::new(&params);
        Adam::default()
            .step(&mut params, &[Tensor::zeros(&[3])], &mut state)
            .unwrap();
        assert_eq!(params, before);
        assert_eq!(state.step, 1);
    }

    #[test]
    fn minimizes_a_quadratic() {
        let adam = Adam { lr: 0.1, ..Default::default() };
        let mut x = vec![Tensor::scalar(1.0)];
        let mut state = AdamState::new(&x);
        for _ in 0..200 {
            let g = Tensor::scalar(2.0 * x[0].data()[0]);
            adam.step(&mut x, &[g], &mut state).unwrap();
        }
        assert!(x[0].data()[0].abs() < 1e-3, "{:?}", x[0]);
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let mut params = vec![Tensor::zeros(&[2])];
        let mut state = AdamState::new(&params);
        let err = Adam::default().step(&mut params, &[Tensor::zeros(&[3])], &mut state);
        assert!(matches!(err, Err(Error::ShapeMismatch { .. })));
    }

    #[test]
    fn state_round_trips_through_names() {
        let params = vec![Tensor::zeros(&[2]), Tensor::zeros(&[1, 3])];
        let mut state = AdamState::new(&params);
        state.step = 7;
        state.m[1].data_mut()[2] = 0.25;
        let back = AdamState::from_named(&state.to_named(), &params).unwrap();
        assert_eq!(back, state);
    }
}
