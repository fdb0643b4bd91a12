use crate::autodiff::Var;
use crate::blocks::{Conv, Forward, Norm};
use crate::error::Result;
use crate::params::ParamStore;

/// Residual block `relu(norm(conv(relu(norm(conv(x))))) + x)` with two
/// same-padded K×K convolutions.
#[derive(Clone, Debug)]
pub struct BasicBlock {
    pub conv1: Conv,
    pub norm1: Norm,
    pub conv2: Conv,
    pub norm2: Norm,
}

impl BasicBlock {
    pub fn new(store: &mut ParamStore, name: &str, channels: usize, kernel: usize) -> Self {
        BasicBlock {
            conv1: Conv::same(store, &format!("{name}.conv1"), channels, channels, kernel),
            norm1: Norm::new(store, &format!("{name}.norm1"), channels),
            conv2: Conv::same(store, &format!("{name}.conv2"), channels, channels, kernel),
            norm2: Norm::new(store, &format!("{name}.norm2"), channels),
        }
    }

    pub fn forward(&self, f: &mut Forward<'_>, x: Var) -> Result<Var> {
        let h = self.conv1.forward(f, x)?;
        let h = self.norm1.forward(f, h)?;
        let h = f.tape.relu(h);
        let h = self.conv2.forward(f, h)?;
        let h = self.norm2.forward(f, h)?;
        let h = f.tape.add(h, x)?;
        Ok(f.tape.relu(h))
    }
}
