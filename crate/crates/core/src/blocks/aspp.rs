use crate::autodiff::Var;
use crate::blocks::{Conv, Forward};
use crate::error::Result;
use crate::ops::conv::Conv2dSpec;
use crate::params::ParamStore;

/// Atrous spatial pyramid pooling. Branches (each conv → relu): a 1×1
/// conv, one dilated 3×3 conv per rate, and a global-pool → 1×1 conv
/// branch broadcast back over the map. The concatenation is projected back
/// to `channels` by a 1×1 conv.
#[derive(Clone, Debug)]
pub struct Aspp {
    pub point: Conv,
    pub dilated: Vec<Conv>,
    pub pooled: Conv,
    pub project: Conv,
}

impl Aspp {
    pub fn new(store: &mut ParamStore, name: &str, channels: usize, dilations: &[usize]) -> Self {
        let dilated = dilations
            .iter()
            .map(|&d| {
                Conv::new(
                    store,
                    &format!("{name}.rate{d}"),
                    channels,
                    channels,
                    3,
                    Conv2dSpec::same(3, d),
                )
            })
            .collect();
        Aspp {
            point: Conv::same(store, &format!("{name}.point"), channels, channels, 1),
            dilated,
            pooled: Conv::same(store, &format!("{name}.pooled"), channels, channels, 1),
            project: Conv::same(
                store,
                &format!("{name}.project"),
                channels * (dilations.len() + 2),
                channels,
                1,
            ),
        }
    }

    pub fn forward(&self, f: &mut Forward<'_>, x: Var) -> Result<Var> {
        let shape = f.tape.value(x).shape().to_vec();
        let mut branches = Vec::with_capacity(self.dilated.len() + 2);
        let p = self.point.forward(f, x)?;
        branches.push(f.tape.relu(p));
        for conv in &self.dilated {
            let d = conv.forward(f, x)?;
            branches.push(f.tape.relu(d));
        }
        let g = f.tape.global_avg_pool(x)?;
        let g = self.pooled.forward(f, g)?;
        let g = f.tape.relu(g);
        branches.push(f.tape.broadcast_to(g, &shape)?);
        let cat = f.tape.concat_channels(&branches)?;
        self.project.forward(f, cat)
    }
}
