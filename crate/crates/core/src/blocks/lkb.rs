use crate::autodiff::Var;
use crate::blocks::{Aspp, BasicBlock, Dcn, Forward, SqueezeExcite};
use crate::error::{Error, Result};
use crate::params::ParamStore;

#[derive(Clone, Debug, PartialEq)]
pub struct LkbConfig {
    pub channels: usize,
    pub kernel_size: usize,
    pub se_reduction: usize,
    pub aspp_dilations: Vec<usize>,
}

impl Default for LkbConfig {
    fn default() -> Self {
        LkbConfig {
            channels: 16,
            kernel_size: 7,
            se_reduction: 4,
            aspp_dilations: vec![1, 2, 3],
        }
    }
}

impl LkbConfig {
    pub fn validate(&self) -> Result<()> {
        if self.kernel_size % 2 == 0 {
            return Err(Error::Config(format!("kernel size {} must be odd", self.kernel_size)));
        }
        if self.channels == 0 || self.se_reduction == 0 || self.channels % self.se_reduction != 0 {
            return Err(Error::Config(format!(
                "channels {} must be a positive multiple of the SE reduction {}",
                self.channels, self.se_reduction
            )));
        }
        if self.aspp_dilations.contains(&0) {
            return Err(Error::Config("ASPP dilations must be positive".into()));
        }
        Ok(())
    }
}

/// Large Kernel Basic module: SE → basic block ×2 → ASPP → DCN.
/// Preserves N, C, H and W.
#[derive(Clone, Debug)]
pub struct Lkb {
    pub se: SqueezeExcite,
    pub block1: BasicBlock,
    pub block2: BasicBlock,
    pub aspp: Aspp,
    pub dcn: Dcn,
    pub config: LkbConfig,
}

impl Lkb {
    pub fn new(store: &mut ParamStore, name: &str, config: &LkbConfig) -> Result<Self> {
        config.validate()?;
        let (c, k) = (config.channels, config.kernel_size);
        Ok(Lkb {
            se: SqueezeExcite::new(store, &format!("{name}.se"), c, config.se_reduction),
            block1: BasicBlock::new(store, &format!("{name}.block1"), c, k),
            block2: BasicBlock::new(store, &format!("{name}.block2"), c, k),
            aspp: Aspp::new(store, &format!("{name}.aspp"), c, &config.aspp_dilations),
            dcn: Dcn::new(store, &format!("{name}.dcn"), c, k),
            config: config.clone(),
        })
    }

    pub fn forward(&self, f: &mut Forward<'_>, x: Var) -> Result<Var> {
        let h = self.se.forward(f, x)?;
        let h = self.block1.forward(f, h)?;
        let h = self.block2.forward(f, h)?;
        let h = self.aspp.forward(f, h)?;
        self.dcn.forward(f, h)
    }

    /// Trainable scalars owned by this module.
    pub fn param_count(&self, store: &ParamStore) -> usize {
        let mut ids = vec![
            self.se.fc1.weight,
            self.se.fc1.bias,
            self.se.fc2.weight,
            self.se.fc2.bias,
        ];
        for b in [&self.block1, &self.block2] {
            ids.extend([
                b.conv1.weight,
                b.conv1.bias,
                b.norm1.gamma,
                b.norm1.beta,
                b.conv2.weight,
                b.conv2.bias,
                b.norm2.gamma,
                b.norm2.beta,
            ]);
        }
        for conv in std::iter::once(&self.aspp.point)
            .chain(&self.aspp.dilated)
            .chain([&self.aspp.pooled, &self.aspp.project, &self.dcn.offset])
        {
            ids.extend([conv.weight, conv.bias]);
        }
        ids.extend([self.dcn.weight, self.dcn.bias]);
        ids.iter().map(|&id| store.get(id).len()).sum()
    }
}
