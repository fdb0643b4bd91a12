//! The double-precision gradient suite behind `roa-bev gradcheck`.
//!
//! Every case differentiates `sum(output)` (or the scalar loss) with
//! respect to all of its inputs and parameters and compares against
//! central differences. Parameter tensors are random, including DCN offset
//! convs, so that sampling points avoid the integer grid where bilinear
//! interpolation has kinks.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Tape, Var};
use crate::blocks::{Aspp, BasicBlock, Dcn, Forward, Lkb, LkbConfig, SqueezeExcite};
use crate::error::Result;
use crate::gradcheck::{check_entries, grad_check_sampled, GradCheckReport, Kinks, DEFAULT_EPS};
use crate::network::{ModelConfig, RoaModel};
use crate::ops::conv::Conv2dSpec;
use crate::ops::norm::NormMode;
use crate::params::ParamStore;
use crate::tensor::{DType, Tensor};

/// Pass threshold on the worst relative error.
pub const GRADCHECK_TOL: f64 = 1e-4;

#[derive(Clone, Debug)]
pub struct CaseResult {
    pub name: String,
    pub report: GradCheckReport,
}

impl CaseResult {
    pub fn passed(&self) -> bool {
        self.report.max_rel_error < GRADCHECK_TOL
    }
}

fn full<F>(f: F, inputs: &[Tensor]) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    check_entries(&f, inputs, DEFAULT_EPS, Kinks::Reprobe, |_, len| (0..len).collect())
}

/// Replaces every parameter with uniform noise in `±scale`.
fn randomize(store: &mut ParamStore, scale: f64, rng: &mut ChaCha8Rng) {
    for id in store.ids().collect::<Vec<_>>() {
        let shape = store.get(id).shape().to_vec();
        store.set(id, Tensor::uniform(&shape, -scale, scale, rng));
    }
}

/// Checks a block's forward w.r.t. its parameters and its input `x`.
fn block_case<B>(store: &ParamStore, norm: NormMode, x: Tensor, run: B) -> Result<GradCheckReport>
where
    B: Fn(&mut Forward<'_>, Var) -> Result<Var>,
{
    let mut inputs = store.values().to_vec();
    inputs.push(x);
    let n = store.len();
    full(
        |tape, vars| {
            let mut f = Forward::with_vars(std::mem::take(tape), vars[..n].to_vec(), store, norm);
            let out = run(&mut f, vars[n])?;
            *tape = f.tape;
            Ok(out)
        },
        &inputs,
    )
}

fn conv_case(kernel: usize, spec: Conv2dSpec, rng: &mut ChaCha8Rng) -> Result<GradCheckReport> {
    let x = Tensor::uniform(&[1, 2, 15, 15], -1.0, 1.0, rng);
    let w = Tensor::uniform(&[3, 2, kernel, kernel], -0.5, 0.5, rng);
    let b = Tensor::uniform(&[3], -0.5, 0.5, rng);
    full(|t, v| t.conv2d(v[0], v[1], v[2], spec), &[x, w, b])
}

/// Checks only input `which` (0: values, 1: coordinates).
fn sample_case(which: usize, rng: &mut ChaCha8Rng) -> Result<GradCheckReport> {
    let x = Tensor::uniform(&[1, 2, 5, 6], -1.0, 1.0, rng);
    // straddles the border so the zero-padding branches are exercised too
    let pts = Tensor::uniform(&[1, 4, 3, 2], -1.4, 6.4, rng);
    let f = |t: &mut Tape, v: &[Var]| t.bilinear_sample(v[0], v[1]);
    check_entries(&f, &[x, pts], DEFAULT_EPS, Kinks::Reprobe, |i, len| {
        if i == which {
            (0..len).collect()
        } else {
            Vec::new()
        }
    })
}

fn store_with<T>(seed: u64, scale: f64, build: impl FnOnce(&mut ParamStore) -> T) -> (T, ParamStore) {
    let mut store = ParamStore::new(seed, DType::F64);
    let block = build(&mut store);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    randomize(&mut store, scale, &mut rng);
    (block, store)
}

pub fn end_to_end_case(seed: u64, per_input: usize, eps: f64, only: Option<(usize, usize)>) -> Result<GradCheckReport> {
    let cfg = ModelConfig {
        input_height: 64,
        input_width: 96,
        base_channels: 4,
        neck_channels: 8,
        seed,
        dtype: DType::F64,
        ..Default::default()
    };
    let (model, mut store) = RoaModel::new(&cfg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for id in store.ids().collect::<Vec<_>>() {
        if store.name(id).contains(".offset.") {
            let shape = store.get(id).shape().to_vec();
            store.set(id, Tensor::uniform(&shape, -0.1, 0.1, &mut rng));
        }
    }
    let image = Tensor::uniform(&[1, 3, 64, 96], 0.0, 1.0, &mut rng);
    let (h, w) = cfg.output_extent();
    let labels: Vec<f64> = (0..h * w).map(|i| ((i * 7 + 3) % 3) as f64).collect();
    let labels = Tensor::new(&[1, 1, h, w], labels)?;
    let mut inputs = store.values().to_vec();
    inputs.push(image);
    let n = store.len();
    let store = &store;
    let f = |tape: &mut Tape, vars: &[Var]| {
            let mut f = Forward::with_vars(std::mem::take(tape), vars[..n].to_vec(), store, NormMode::Identity);
            let y = f.input(labels.clone());
            let out = model.forward(&mut f, vars[n], Some(y))?;
            *tape = f.tape;
            Ok(out.l_roa.expect("labels given"))
        };
    if let Some((i, j)) = only {
        return check_entries(&f, &inputs, eps, Kinks::Reprobe, |k, _| if k == i { vec![j] } else { vec![] });
    }
    grad_check_sampled(f, &inputs, eps, per_input, Kinks::Reprobe, &mut rng)
}

/// Runs every case. `per_input` bounds how many entries of each parameter
/// tensor the end-to-end case probes.
pub fn run_suite(seed: u64, per_input: usize) -> Result<Vec<CaseResult>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    let mut push = |name: &str, report: GradCheckReport| {
        out.push(CaseResult {
            name: name.to_string(),
            report,
        })
    };

    push("conv2d k3", conv_case(3, Conv2dSpec::same(3, 1), &mut rng)?);
    push("conv2d k3 dilation 2", conv_case(3, Conv2dSpec::same(3, 2), &mut rng)?);
    push("conv2d k7 stride 2", conv_case(7, Conv2dSpec::new(2, 3, 1), &mut rng)?);
    push("conv2d k13", conv_case(13, Conv2dSpec::same(13, 1), &mut rng)?);
    push("bilinear_sample values", sample_case(0, &mut rng)?);
    push("bilinear_sample coordinates", sample_case(1, &mut rng)?);

    let (se, store) = store_with(seed + 1, 0.5, |s| SqueezeExcite::new(s, "se", 8, 4));
    let x = Tensor::uniform(&[2, 8, 4, 5], -1.0, 1.0, &mut rng);
    push("squeeze_excite", block_case(&store, NormMode::Train, x, |f, x| se.forward(f, x))?);

    let (bb, mut store) = store_with(seed + 2, 0.5, |s| BasicBlock::new(s, "block", 3, 3));
    // batch norm scale/shift around 1 and 0
    for id in store.ids().collect::<Vec<_>>() {
        if store.name(id).ends_with(".gamma") {
            let shape = store.get(id).shape().to_vec();
            store.set(id, Tensor::uniform(&shape, 0.5, 1.5, &mut rng));
        }
    }
    let x = Tensor::uniform(&[2, 3, 5, 5], -1.0, 1.0, &mut rng);
    push("basic_block (batch statistics)", block_case(&store, NormMode::Train, x, |f, x| bb.forward(f, x))?);

    let (aspp, store) = store_with(seed + 3, 0.5, |s| Aspp::new(s, "aspp", 3, &[1, 2, 3]));
    let x = Tensor::uniform(&[1, 3, 7, 7], -1.0, 1.0, &mut rng);
    push("aspp", block_case(&store, NormMode::Train, x, |f, x| aspp.forward(f, x))?);

    let (dcn, store) = store_with(seed + 4, 0.3, |s| Dcn::new(s, "dcn", 3, 3));
    let x = Tensor::uniform(&[1, 3, 6, 6], -1.0, 1.0, &mut rng);
    push("dcn", block_case(&store, NormMode::Train, x, |f, x| dcn.forward(f, x))?);

    let lkb_cfg = LkbConfig {
        channels: 4,
        kernel_size: 7,
        se_reduction: 2,
        aspp_dilations: vec![1, 2, 3],
    };
    let (lkb, store) = store_with(seed + 5, 0.3, |s| Lkb::new(s, "lkb", &lkb_cfg));
    let lkb = lkb?;
    let x = Tensor::uniform(&[1, 4, 8, 8], -1.0, 1.0, &mut rng);
    push("lkb", block_case(&store, NormMode::Train, x, |f, x| lkb.forward(f, x))?);

    push("end-to-end l_roa (1x3x64x96)", end_to_end_case(seed + 6, per_input, DEFAULT_EPS, None)?);
    Ok(out)
}
