use crate::autodiff::Var;
use crate::blocks::{Forward, StatUpdate};
use crate::error::Result;
use crate::ops::conv::Conv2dSpec;
use crate::ops::norm::RunningStats;
use crate::params::{BufferId, ParamId, ParamStore};
use crate::tensor::Tensor;

#[derive(Clone, Debug)]
pub struct Conv {
    pub weight: ParamId,
    pub bias: ParamId,
    pub spec: Conv2dSpec,
    pub kernel: usize,
}

impl Conv {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        spec: Conv2dSpec,
    ) -> Self {
        let fan_in = in_channels * kernel * kernel;
        Conv {
            weight: store.add_uniform(format!("{name}.weight"), &[out_channels, in_channels, kernel, kernel], fan_in),
            bias: store.add_uniform(format!("{name}.bias"), &[out_channels], fan_in),
            spec,
            kernel,
        }
    }

    /// Stride-1 convolution that preserves spatial extents.
    pub fn same(store: &mut ParamStore, name: &str, in_channels: usize, out_channels: usize, kernel: usize) -> Self {
        Conv::new(store, name, in_channels, out_channels, kernel, Conv2dSpec::same(kernel, 1))
    }

    pub fn forward(&self, f: &mut Forward<'_>, x: Var) -> Result<Var> {
        let (w, b) = (f.param(self.weight), f.param(self.bias));
        f.tape.conv2d(x, w, b, self.spec)
    }
}

#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Linear {
    pub fn new(store: &mut ParamStore, name: &str, inputs: usize, outputs: usize) -> Self {
        Linear {
            weight: store.add_uniform(format!("{name}.weight"), &[outputs, inputs], inputs),
            bias: store.add_uniform(format!("{name}.bias"), &[outputs], inputs),
        }
    }

    pub fn forward(&self, f: &mut Forward<'_>, x: Var) -> Result<Var> {
        let (w, b) = (f.param(self.weight), f.param(self.bias));
        f.tape.fully_connected(x, w, b)
    }
}

/// Batch normalization with learned affine and running statistics.
#[derive(Clone, Debug)]
pub struct Norm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: BufferId,
    pub running_var: BufferId,
}

impl Norm {
    pub fn new(store: &mut ParamStore, name: &str, channels: usize) -> Self {
        Norm {
            gamma: store.add(format!("{name}.gamma"), Tensor::ones(&[channels])),
            beta: store.add(format!("{name}.beta"), Tensor::zeros(&[channels])),
            running_mean: store.add_buffer(format!("{name}.running_mean"), Tensor::zeros(&[channels])),
            running_var: store.add_buffer(format!("{name}.running_var"), Tensor::ones(&[channels])),
        }
    }

    pub fn forward(&self, f: &mut Forward<'_>, x: Var) -> Result<Var> {
        let (g, b) = (f.param(self.gamma), f.param(self.beta));
        let store = f.store();
        let running = RunningStats {
            mean: store.buffer(self.running_mean),
            var: store.buffer(self.running_var),
        };
        let mode = f.norm;
        let (out, stats) = f.tape.batch_norm(x, g, b, running, mode)?;
        if let Some((batch_mean, batch_var)) = stats {
            f.record(StatUpdate {
                mean: self.running_mean,
                var: self.running_var,
                batch_mean,
                batch_var,
            });
        }
        Ok(out)
    }
}
