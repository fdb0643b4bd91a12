//! Toy backbone, FPN-lite neck, multi-scale ROA head and attention.
//!
//! Cameras are folded into the batch axis, so a sample of six cameras is a
//! 6×3×H×W image tensor and its predictions are 6×1×(H/16)×(W/16).

use std::fmt;
use std::str::FromStr;

use crate::autodiff::Var;
use crate::blocks::{BasicBlock, Conv, Forward, Lkb, LkbConfig};
use crate::error::{Error, Result};
use crate::labels::RegionType;
use crate::ops::conv::Conv2dSpec;
use crate::ops::norm::NormMode;
use crate::params::ParamStore;
use crate::tensor::{DType, Tensor};

/// Strides of the four backbone levels relative to the input image.
pub const LEVEL_STRIDES: [usize; 4] = [4, 8, 16, 32];

/// Stride of the fused feature map, the ROA prediction and the labels.
pub const OUTPUT_STRIDE: usize = 16;

/// Initial bias of the single-channel ROA output conv. Positive so the
/// terminal relu starts in its active region.
pub const HEAD_BIAS_INIT: f64 = 0.5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum ScaleMode {
    /// Only the stride-16 backbone level feeds the ROA branch.
    SameScale,
    /// The fused FPN output feeds the ROA branch.
    FpnFeature,
    /// All four backbone levels, each through its own LKB.
    #[default]
    MultiScale,
}

impl ScaleMode {
    pub const ALL: [ScaleMode; 3] = [ScaleMode::SameScale, ScaleMode::FpnFeature, ScaleMode::MultiScale];
}

impl FromStr for ScaleMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "same_scale" | "same-scale" => Ok(ScaleMode::SameScale),
            "fpn_feature" | "fpn-feature" => Ok(ScaleMode::FpnFeature),
            "multi_scale" | "multi-scale" => Ok(ScaleMode::MultiScale),
            other => Err(Error::Config(format!(
                "scale mode must be same_scale|fpn_feature|multi_scale, got `{other}`"
            ))),
        }
    }
}

impl fmt::Display for ScaleMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ScaleMode::SameScale => "same_scale",
            ScaleMode::FpnFeature => "fpn_feature",
            ScaleMode::MultiScale => "multi_scale",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub input_height: usize,
    pub input_width: usize,
    /// Backbone widths are `base, 2·base, 4·base, 8·base`.
    pub base_channels: usize,
    /// Width of the FPN output and of every LKB.
    pub neck_channels: usize,
    pub kernel_size: usize,
    pub se_reduction: usize,
    pub aspp_dilations: Vec<usize>,
    pub scale_mode: ScaleMode,
    pub region_type: RegionType,
    /// One LKB shared by all pyramid levels instead of one per level.
    pub shared_lkb: bool,
    /// Modulate with `features ⊙ (1 + roa)` instead of `features ⊙ roa`.
    pub residual_attention: bool,
    pub seed: u64,
    pub dtype: DType,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            input_height: 256,
            input_width: 704,
            base_channels: 16,
            neck_channels: 16,
            kernel_size: 7,
            se_reduction: 4,
            aspp_dilations: vec![1, 2, 3],
            scale_mode: ScaleMode::MultiScale,
            region_type: RegionType::Overlap,
            shared_lkb: false,
            residual_attention: false,
            seed: 0,
            dtype: DType::F32,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.input_height == 0 || self.input_width == 0 || self.input_height % 32 != 0 || self.input_width % 32 != 0 {
            return Err(Error::Config(format!(
                "input {}x{} must be a positive multiple of 32",
                self.input_height, self.input_width
            )));
        }
        if self.base_channels == 0 {
            return Err(Error::Config("base_channels must be positive".into()));
        }
        self.lkb_config().validate()
    }

    pub fn lkb_config(&self) -> LkbConfig {
        LkbConfig {
            channels: self.neck_channels,
            kernel_size: self.kernel_size,
            se_reduction: self.se_reduction,
            aspp_dilations: self.aspp_dilations.clone(),
        }
    }

    pub fn level_channels(&self) -> [usize; 4] {
        let c = self.base_channels;
        [c, 2 * c, 4 * c, 8 * c]
    }

    /// Extents of the stride-16 grid shared by FPN output, ROA and labels.
    pub fn output_extent(&self) -> (usize, usize) {
        (self.input_height / OUTPUT_STRIDE, self.input_width / OUTPUT_STRIDE)
    }
}

/// Resamples a map from one stride to another: block-average when getting
/// coarser, bilinear when getting finer.
pub fn resample(f: &mut Forward<'_>, x: Var, from_stride: usize, to_stride: usize) -> Result<Var> {
    use std::cmp::Ordering::*;
    match from_stride.cmp(&to_stride) {
        Equal => Ok(x),
        Less => f.tape.avg_downsample(x, to_stride / from_stride),
        Greater => f.tape.bilinear_upsample(x, from_stride / to_stride),
    }
}

#[derive(Clone, Debug)]
pub struct Stage {
    pub down: Conv,
    pub block: BasicBlock,
}

#[derive(Clone, Debug)]
pub struct Backbone {
    pub stages: Vec<Stage>,
}

impl Backbone {
    pub fn new(store: &mut ParamStore, channels: [usize; 4]) -> Self {
        let mut prev = 3;
        let stages = channels
            .iter()
            .enumerate()
            .map(|(i, &c)| {
                let name = format!("backbone.stage{}", i + 1);
                // Stem: 7×7 stride 4. Later stages: 3×3 stride 2.
                let (k, spec) = if i == 0 {
                    (7, Conv2dSpec::new(4, 3, 1))
                } else {
                    (3, Conv2dSpec::new(2, 1, 1))
                };
                let stage = Stage {
                    down: Conv::new(store, &format!("{name}.down"), prev, c, k, spec),
                    block: BasicBlock::new(store, &format!("{name}.block"), c, 3),
                };
                prev = c;
                stage
            })
            .collect();
        Backbone { stages }
    }

    pub fn forward(&self, f: &mut Forward<'_>, image: Var) -> Result<[Var; 4]> {
        let (_, c, h, w) = f.tape.value(image).dims4("backbone")?;
        if c != 3 || h % 32 != 0 || w % 32 != 0 {
            return Err(Error::shape(
                "backbone",
                format!("expected N×3×H×W with H, W multiples of 32, got {:?}", f.tape.value(image).shape()),
            ));
        }
        let mut x = image;
        let mut levels = [image; 4];
        for (level, stage) in levels.iter_mut().zip(&self.stages) {
            let h = stage.down.forward(f, x)?;
            let h = f.tape.relu(h);
            x = stage.block.forward(f, h)?;
            *level = x;
        }
        Ok(levels)
    }
}

#[derive(Clone, Debug)]
pub struct Fpn {
    pub laterals: Vec<Conv>,
    pub fuse: Conv,
}

impl Fpn {
    pub fn new(store: &mut ParamStore, channels: [usize; 4], neck: usize) -> Self {
        let laterals = channels
            .iter()
            .enumerate()
            .map(|(i, &c)| Conv::same(store, &format!("fpn.lateral{}", i + 1), c, neck, 1))
            .collect();
        Fpn {
            laterals,
            fuse: Conv::same(store, "fpn.fuse", neck, neck, 3),
        }
    }

    /// Lateral projection of one level, resampled to the output stride.
    pub fn lateral(&self, f: &mut Forward<'_>, level: usize, x: Var) -> Result<Var> {
        let l = self.laterals[level].forward(f, x)?;
        resample(f, l, LEVEL_STRIDES[level], OUTPUT_STRIDE)
    }

    pub fn forward(&self, f: &mut Forward<'_>, pyramid: &[Var; 4]) -> Result<Var> {
        let mut sum = self.lateral(f, 0, pyramid[0])?;
        for (level, &x) in pyramid.iter().enumerate().skip(1) {
            let l = self.lateral(f, level, x)?;
            sum = f.tape.add(sum, l)?;
        }
        self.fuse.forward(f, sum)
    }
}

#[derive(Clone, Debug)]
pub struct RoaHead {
    pub mode: ScaleMode,
    /// Per-branch 1×1 projections from backbone width to neck width,
    /// paired with `levels`. Empty in `FpnFeature` mode.
    pub projections: Vec<Conv>,
    /// Pyramid level index feeding each branch.
    pub levels: Vec<usize>,
    pub lkbs: Vec<Lkb>,
    pub shared: bool,
    pub out: Conv,
}

impl RoaHead {
    pub fn new(store: &mut ParamStore, cfg: &ModelConfig) -> Result<Self> {
        let channels = cfg.level_channels();
        let neck = cfg.neck_channels;
        let levels: Vec<usize> = match cfg.scale_mode {
            ScaleMode::MultiScale => (0..4).collect(),
            ScaleMode::SameScale => vec![2],
            ScaleMode::FpnFeature => vec![],
        };
        let projections = levels
            .iter()
            .map(|&l| Conv::same(store, &format!("roa.proj{}", l + 1), channels[l], neck, 1))
            .collect();
        let branches = levels.len().max(1);
        let shared = cfg.shared_lkb && branches > 1;
        let lkb_cfg = cfg.lkb_config();
        let lkbs = (0..if shared { 1 } else { branches })
            .map(|i| Lkb::new(store, &format!("roa.lkb{}", i + 1), &lkb_cfg))
            .collect::<Result<Vec<_>>>()?;
        let out = Conv::same(store, "roa.out", neck, 1, 1);
        store.set(out.bias, Tensor::full(&[1], HEAD_BIAS_INIT));
        Ok(RoaHead {
            mode: cfg.scale_mode,
            projections,
            levels,
            lkbs,
            shared,
            out,
        })
    }

    fn lkb(&self, branch: usize) -> &Lkb {
        &self.lkbs[if self.shared { 0 } else { branch }]
    }

    /// One branch before summation: projection → LKB → resample to stride 16.
    pub fn branch(&self, f: &mut Forward<'_>, branch: usize, pyramid: &[Var; 4], fpn_out: Var) -> Result<Var> {
        if self.mode == ScaleMode::FpnFeature {
            return self.lkb(0).forward(f, fpn_out);
        }
        let level = self.levels[branch];
        let x = self.projections[branch].forward(f, pyramid[level])?;
        let x = self.lkb(branch).forward(f, x)?;
        resample(f, x, LEVEL_STRIDES[level], OUTPUT_STRIDE)
    }

    /// Non-negative N×1×(H/16)×(W/16) attention map.
    pub fn forward(&self, f: &mut Forward<'_>, pyramid: &[Var; 4], fpn_out: Var) -> Result<Var> {
        let branches = self.levels.len().max(1);
        let mut sum = self.branch(f, 0, pyramid, fpn_out)?;
        for b in 1..branches {
            let x = self.branch(f, b, pyramid, fpn_out)?;
            sum = f.tape.add(sum, x)?;
        }
        let logits = self.out.forward(f, sum)?;
        Ok(f.tape.relu(logits))
    }
}

/// `features ⊙ roa`, or `features ⊙ (1 + roa)` in residual mode, with the
/// single-channel map broadcast over channels.
pub fn apply_attention(f: &mut Forward<'_>, features: Var, roa: Var, residual: bool) -> Result<Var> {
    let fs = f.tape.value(features).shape().to_vec();
    let rs = f.tape.value(roa).shape().to_vec();
    if fs.len() != 4 || rs.len() != 4 || rs[0] != fs[0] || rs[1] != 1 || rs[2..] != fs[2..] {
        return Err(Error::shape(
            "apply_attention",
            format!("features {fs:?} vs attention {rs:?}"),
        ));
    }
    let modulated = f.tape.mul(features, roa)?;
    if residual {
        f.tape.add(modulated, features)
    } else {
        Ok(modulated)
    }
}

/// Tape handles of every intermediate of one forward pass.
#[derive(Clone, Copy, Debug)]
pub struct ForwardVars {
    pub pyramid: [Var; 4],
    pub fpn: Var,
    pub roa: Var,
    pub modulated: Var,
    pub l_roa: Option<Var>,
}

/// Values of one forward pass.
#[derive(Clone, Debug)]
pub struct ForwardResult {
    pub pyramid: Vec<Tensor>,
    pub fpn: Tensor,
    pub roa_pred: Tensor,
    pub modulated: Tensor,
    pub l_roa: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct RoaModel {
    pub config: ModelConfig,
    pub backbone: Backbone,
    pub fpn: Fpn,
    pub roa: RoaHead,
}

impl RoaModel {
    /// Builds the model and its freshly initialized parameters. Backbone
    /// and FPN parameters are drawn first, so they do not depend on the
    /// ROA configuration.
    pub fn new(config: &ModelConfig) -> Result<(Self, ParamStore)> {
        config.validate()?;
        let mut store = ParamStore::new(config.seed, config.dtype);
        let channels = config.level_channels();
        let backbone = Backbone::new(&mut store, channels);
        let fpn = Fpn::new(&mut store, channels, config.neck_channels);
        let roa = RoaHead::new(&mut store, config)?;
        Ok((
            RoaModel {
                config: config.clone(),
                backbone,
                fpn,
                roa,
            },
            store,
        ))
    }

    /// backbone → FPN → ROA → attention, plus the L1 ROA loss when labels
    /// are given.
    pub fn forward(&self, f: &mut Forward<'_>, image: Var, labels: Option<Var>) -> Result<ForwardVars> {
        let pyramid = self.backbone.forward(f, image)?;
        let fpn = self.fpn.forward(f, &pyramid)?;
        let roa = self.roa.forward(f, &pyramid, fpn)?;
        let modulated = apply_attention(f, fpn, roa, self.config.residual_attention)?;
        let l_roa = labels.map(|l| f.tape.l1_loss(roa, l)).transpose()?;
        Ok(ForwardVars {
            pyramid,
            fpn,
            roa,
            modulated,
            l_roa,
        })
    }

    /// Forward pass returning values only.
    pub fn full_forward(
        &self,
        store: &ParamStore,
        image: &Tensor,
        labels: Option<&Tensor>,
        norm: NormMode,
    ) -> Result<ForwardResult> {
        let mut f = Forward::new(store, norm);
        let x = f.input(image.clone());
        let l = labels.map(|t| f.input(t.clone()));
        let vars = self.forward(&mut f, x, l)?;
        let t = &f.tape;
        Ok(ForwardResult {
            pyramid: vars.pyramid.iter().map(|&v| t.value(v).clone()).collect(),
            fpn: t.value(vars.fpn).clone(),
            roa_pred: t.value(vars.roa).clone(),
            modulated: t.value(vars.modulated).clone(),
            l_roa: vars.l_roa.map(|v| t.value(v).data()[0]),
        })
    }
}
