use crate::autodiff::Var;
use crate::blocks::{Forward, Linear};
use crate::error::{Error, Result};
use crate::params::ParamStore;

/// Squeeze-and-excitation channel gate:
/// `x · sigmoid(fc2(relu(fc1(avgpool(x)))))`.
#[derive(Clone, Debug)]
pub struct SqueezeExcite {
    pub fc1: Linear,
    pub fc2: Linear,
    pub channels: usize,
}

impl SqueezeExcite {
    pub fn new(store: &mut ParamStore, name: &str, channels: usize, reduction: usize) -> Self {
        let hidden = (channels / reduction).max(1);
        SqueezeExcite {
            fc1: Linear::new(store, &format!("{name}.fc1"), channels, hidden),
            fc2: Linear::new(store, &format!("{name}.fc2"), hidden, channels),
            channels,
        }
    }

    pub fn forward(&self, f: &mut Forward<'_>, x: Var) -> Result<Var> {
        let (n, c, _, _) = f.tape.value(x).dims4("se")?;
        if c != self.channels {
            return Err(Error::shape("se", format!("expected {} channels, got {c}", self.channels)));
        }
        let pooled = f.tape.global_avg_pool(x)?;
        let flat = f.tape.reshape(pooled, &[n, c])?;
        let h = self.fc1.forward(f, flat)?;
        let h = f.tape.relu(h);
        let g = self.fc2.forward(f, h)?;
        let g = f.tape.sigmoid(g);
        let gate = f.tape.reshape(g, &[n, c, 1, 1])?;
        f.tape.mul(x, gate)
    }
}
