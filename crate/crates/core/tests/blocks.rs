mod common;

use common::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use roa_core::blocks::{Aspp, BasicBlock, Dcn, Forward, Lkb, LkbConfig, SqueezeExcite};
use roa_core::gradcheck::{check_entries, Kinks};
use roa_core::ops::elementwise::{binary, unary, Binary, Unary};
use roa_core::ops::{conv2d, fully_connected, global_avg_pool, Conv2dSpec, NormMode};
use roa_core::params::ParamStore;
use roa_core::{DType, Tensor};

const KERNELS: [usize; 6] = [3, 5, 7, 9, 11, 13];

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn store() -> ParamStore {
    ParamStore::new(5, DType::F64)
}

fn zero_all(store: &mut ParamStore) {
    for id in store.ids().collect::<Vec<_>>() {
        let shape = store.get(id).shape().to_vec();
        store.set(id, Tensor::zeros(&shape));
    }
}

fn run<B>(store: &ParamStore, norm: NormMode, x: &Tensor, block: B) -> Tensor
where
    B: Fn(&mut Forward<'_>, roa_core::Var) -> roa_core::Result<roa_core::Var>,
{
    let mut f = Forward::new(store, norm);
    let v = f.input(x.clone());
    let out = block(&mut f, v).unwrap();
    f.tape.value(out).clone()
}

/// Finite-difference check of a block w.r.t. its parameters and input.
fn block_gradcheck<B>(store: &ParamStore, norm: NormMode, x: Tensor, block: B) -> f64
where
    B: Fn(&mut Forward<'_>, roa_core::Var) -> roa_core::Result<roa_core::Var>,
{
    let mut inputs = store.values().to_vec();
    inputs.push(x);
    let n = store.len();
    let f = |tape: &mut roa_core::Tape, vars: &[roa_core::Var]| {
        let mut fw = Forward::with_vars(std::mem::take(tape), vars[..n].to_vec(), store, norm);
        let out = block(&mut fw, vars[n])?;
        *tape = fw.tape;
        Ok(out)
    };
    check_entries(&f, &inputs, 1e-5, Kinks::Reprobe, |_, len| (0..len).collect())
        .unwrap()
        .max_rel_error
}

#[test]
fn se_neutral_gate_halves_input() {
    let mut s = store();
    let se = SqueezeExcite::new(&mut s, "se", 8, 4);
    zero_all(&mut s);
    let x = random_tensor(&mut rng(1), &[2, 8, 3, 5]);
    let y = run(&s, NormMode::Train, &x, |f, v| se.forward(f, v));
    assert_eq!(y, x.map(|v| 0.5 * v));
}

#[test]
fn se_matches_primitive_composition() {
    let mut s = store();
    let se = SqueezeExcite::new(&mut s, "se", 8, 4);
    let x = random_tensor(&mut rng(2), &[2, 8, 4, 4]);
    let y = run(&s, NormMode::Train, &x, |f, v| se.forward(f, v));
    let pooled = global_avg_pool(&x).unwrap().reshape(&[2, 8]).unwrap();
    let h = fully_connected(&pooled, s.get(se.fc1.weight), s.get(se.fc1.bias)).unwrap();
    let h = unary(Unary::Relu, &h);
    let g = fully_connected(&h, s.get(se.fc2.weight), s.get(se.fc2.bias)).unwrap();
    let g = unary(Unary::Sigmoid, &g).reshape(&[2, 8, 1, 1]).unwrap();
    let want = binary(Binary::Mul, &x, &g).unwrap();
    assert!(y.max_abs_diff(&want) < 1e-6);
}

#[test]
fn basic_block_residual_path_only() {
    let mut s = store();
    let bb = BasicBlock::new(&mut s, "b", 3, 5);
    zero_all(&mut s);
    let x = random_tensor(&mut rng(3), &[1, 3, 6, 7]);
    let y = run(&s, NormMode::Identity, &x, |f, v| bb.forward(f, v));
    assert_eq!(y, unary(Unary::Relu, &x));
}

#[test]
fn every_block_preserves_shape_across_kernel_sweep() {
    let x = random_tensor(&mut rng(4), &[2, 4, 7, 9]);
    for k in KERNELS {
        let mut s = store();
        let bb = BasicBlock::new(&mut s, "b", 4, k);
        let dcn = Dcn::new(&mut s, "d", 4, k);
        let se = SqueezeExcite::new(&mut s, "se", 4, 2);
        let aspp = Aspp::new(&mut s, "a", 4, &[1, 2, 3]);
        let lkb = Lkb::new(&mut s, "l", &LkbConfig { channels: 4, kernel_size: k, se_reduction: 2, ..Default::default() }).unwrap();
        for y in [
            run(&s, NormMode::Train, &x, |f, v| bb.forward(f, v)),
            run(&s, NormMode::Train, &x, |f, v| dcn.forward(f, v)),
            run(&s, NormMode::Train, &x, |f, v| se.forward(f, v)),
            run(&s, NormMode::Train, &x, |f, v| aspp.forward(f, v)),
            run(&s, NormMode::Train, &x, |f, v| lkb.forward(f, v)),
        ] {
            assert_eq!(y.shape(), x.shape(), "kernel {k}");
        }
    }
}

#[test]
fn aspp_keeps_constants_in_the_interior() {
    // Zero padding makes border cells see fewer taps of the dilated convs,
    // so constancy holds only where every tap lands inside the map.
    let mut s = store();
    let aspp = Aspp::new(&mut s, "a", 3, &[1, 2, 3]);
    let x = Tensor::full(&[1, 3, 12, 12], 0.7);
    let y = run(&s, NormMode::Train, &x, |f, v| aspp.forward(f, v));
    for c in 0..3 {
        let first = y.at(&[0, c, 3, 3]);
        for i in 3..9 {
            for j in 3..9 {
                assert!((y.at(&[0, c, i, j]) - first).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn aspp_dilated_branch_is_inflated_conv() {
    let mut s = store();
    let aspp = Aspp::new(&mut s, "a", 3, &[1, 2, 3]);
    let x = random_tensor(&mut rng(5), &[1, 3, 11, 10]);
    for (conv, d) in aspp.dilated.iter().zip([1, 2, 3]) {
        let w = s.get(conv.weight);
        let b = s.get(conv.bias);
        let branch = run(&s, NormMode::Train, &x, |f, v| conv.forward(f, v));
        let dense = conv2d(&x, &inflate_kernel(w, d), b, Conv2dSpec::new(1, d, 1)).unwrap();
        assert!(branch.max_abs_diff(&dense) < 1e-12, "rate {d}");
    }
}

#[test]
fn dcn_without_offsets_is_plain_conv() {
    let mut r = rng(6);
    for case in 0..20 {
        let k = KERNELS[case % KERNELS.len()];
        let c = 1 + case % 3;
        let mut s = ParamStore::new(case as u64, DType::F64);
        let dcn = Dcn::new(&mut s, "d", c, k);
        let x = random_tensor(&mut r, &[1 + case % 2, c, 4 + case % 5, 5 + case % 4]);
        let y = run(&s, NormMode::Train, &x, |f, v| dcn.forward(f, v));
        let want = conv2d(&x, s.get(dcn.weight), s.get(dcn.bias), Conv2dSpec::same(k, 1)).unwrap();
        assert_eq!(y, want, "case {case}");
    }
}

#[test]
fn dcn_unit_offset_undoes_a_shift() {
    let mut s = store();
    let dcn = Dcn::new(&mut s, "d", 2, 3);
    let bias = Tensor::new(&[18], (0..18).map(|i| if i % 2 == 0 { 1.0 } else { 0.0 }).collect()).unwrap();
    s.set(dcn.offset.bias, bias);
    let x = random_tensor(&mut rng(7), &[1, 2, 8, 9]);
    // shifted(y) = x(y − 1)
    let mut shifted = Tensor::zeros(x.shape());
    for c in 0..2 {
        for y in 1..8 {
            for j in 0..9 {
                let v = x.at(&[0, c, y - 1, j]);
                let o = shifted.offset(&[0, c, y, j]);
                shifted.data_mut()[o] = v;
            }
        }
    }
    let got = run(&s, NormMode::Train, &shifted, |f, v| dcn.forward(f, v));
    let want = conv2d(&x, s.get(dcn.weight), s.get(dcn.bias), Conv2dSpec::same(3, 1)).unwrap();
    // The last row of `x` is pushed out of `shifted`, so rows needing it are skipped.
    for o in 0..2 {
        for y in 0..6 {
            for j in 0..9 {
                assert!((got.at(&[0, o, y, j]) - want.at(&[0, o, y, j])).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn dcn_and_basic_block_gradients() {
    let mut s = store();
    let dcn = Dcn::new(&mut s, "d", 2, 3);
    let mut r = rng(8);
    for id in s.ids().collect::<Vec<_>>() {
        let shape = s.get(id).shape().to_vec();
        s.set(id, Tensor::uniform(&shape, -0.3, 0.3, &mut r));
    }
    let x = random_tensor(&mut r, &[1, 2, 5, 5]);
    assert!(block_gradcheck(&s, NormMode::Train, x, |f, v| dcn.forward(f, v)) < 1e-4);

    let mut s = store();
    let bb = BasicBlock::new(&mut s, "b", 2, 3);
    let x = random_tensor(&mut r, &[1, 2, 5, 5]);
    assert!(block_gradcheck(&s, NormMode::Identity, x, |f, v| bb.forward(f, v)) < 1e-4);
}

#[test]
fn lkb_gradients_with_identity_norm() {
    let cfg = LkbConfig { channels: 4, kernel_size: 5, se_reduction: 2, aspp_dilations: vec![1, 2] };
    let mut s = store();
    let lkb = Lkb::new(&mut s, "l", &cfg).unwrap();
    let mut r = rng(9);
    for id in s.ids().collect::<Vec<_>>() {
        if s.name(id).contains(".offset.") {
            let shape = s.get(id).shape().to_vec();
            s.set(id, Tensor::uniform(&shape, -0.1, 0.1, &mut r));
        }
    }
    let x = random_tensor(&mut r, &[1, 4, 6, 6]);
    assert!(block_gradcheck(&s, NormMode::Identity, x, |f, v| lkb.forward(f, v)) < 1e-4);
}

#[test]
fn lkb_neutral_settings_give_zero_map() {
    let mut s = store();
    let lkb = Lkb::new(&mut s, "l", &LkbConfig::default()).unwrap();
    zero_all(&mut s);
    let x = random_tensor(&mut rng(10), &[1, 16, 16, 44]);
    let y = run(&s, NormMode::Identity, &x, |f, v| lkb.forward(f, v));
    assert_eq!(y.shape(), &[1, 16, 16, 44]);
    assert!(y.data().iter().all(|&v| v == 0.0));
}

#[test]
fn lkb_equals_its_sub_blocks_in_sequence() {
    let mut s = store();
    let lkb = Lkb::new(&mut s, "l", &LkbConfig { channels: 8, kernel_size: 7, se_reduction: 4, ..Default::default() }).unwrap();
    let x = random_tensor(&mut rng(11), &[1, 8, 16, 20]);
    let y = run(&s, NormMode::Train, &x, |f, v| lkb.forward(f, v));
    let h = run(&s, NormMode::Train, &x, |f, v| lkb.se.forward(f, v));
    let h = run(&s, NormMode::Train, &h, |f, v| lkb.block1.forward(f, v));
    let h = run(&s, NormMode::Train, &h, |f, v| lkb.block2.forward(f, v));
    let h = run(&s, NormMode::Train, &h, |f, v| lkb.aspp.forward(f, v));
    let h = run(&s, NormMode::Train, &h, |f, v| lkb.dcn.forward(f, v));
    assert!(y.max_abs_diff(&h) < 1e-6);
}

fn lkb_param_formula(c: usize, k: usize, r: usize, dilations: usize) -> usize {
    let hidden = c / r;
    let se = c * hidden + hidden + hidden * c + c;
    let block = 2 * (c * c * k * k + c) + 2 * 2 * c;
    let aspp = (c * c + c) + dilations * (c * c * 9 + c) + (c * c + c) + ((dilations + 2) * c * c + c);
    let dcn = (2 * k * k * c * 9 + 2 * k * k) + (c * c * k * k + c);
    se + 2 * block + aspp + dcn
}

#[test]
fn lkb_parameter_count_closed_form() {
    for k in KERNELS {
        for (c, r, d) in [(16, 4, vec![1, 2, 3]), (8, 2, vec![1, 6]), (4, 4, vec![2])] {
            let mut s = store();
            let cfg = LkbConfig { channels: c, kernel_size: k, se_reduction: r, aspp_dilations: d.clone() };
            let lkb = Lkb::new(&mut s, "l", &cfg).unwrap();
            assert_eq!(lkb.param_count(&s), lkb_param_formula(c, k, r, d.len()));
            assert_eq!(s.scalar_count(), lkb.param_count(&s));
        }
    }
}

#[test]
fn lkb_rejects_bad_config() {
    let mut s = store();
    assert!(Lkb::new(&mut s, "l", &LkbConfig { kernel_size: 4, ..Default::default() }).is_err());
    assert!(Lkb::new(&mut s, "l", &LkbConfig { channels: 6, se_reduction: 4, ..Default::default() }).is_err());
}
