//! Central-difference verification of the analytic backward rules.

use rand::seq::index::sample;
use rand::Rng;

use crate::autodiff::{Tape, Var};
use crate::error::Result;
use crate::tensor::{DType, Tensor};

/// Gradients smaller than this are compared in absolute terms, so that
/// entries whose true gradient is ~0 do not blow up the relative error.
pub const REL_FLOOR: f64 = 1e-3;

pub const DEFAULT_EPS: f64 = 1e-5;

/// Relative disagreement above which [`Kinks::Reprobe`] looks closer.
pub const REPROBE_ABOVE: f64 = 1e-6;

/// How closely the two smaller-step estimates must agree to be trusted.
/// Looser than [`REPROBE_ABOVE`] because rounding noise grows as the step
/// shrinks.
pub const REPROBE_AGREE: f64 = 1e-5;

/// What to do when a central difference disagrees with the analytic value.
///
/// relu and L1 are not differentiable at 0. If `x ± eps` straddles such a
/// point the central difference mixes two slopes and is simply not an
/// estimate of the derivative at `x`. `Reprobe` re-measures such entries at
/// `eps/10` and `eps/100`; when those two agree the function is smooth at
/// that scale and the `eps/10` estimate replaces the straddled one. A wrong
/// analytic gradient stays wrong at every step size, so this cannot hide a
/// faulty backward rule.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Kinks {
    Strict,
    Reprobe,
}

/// Worst entry found by a check.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub input: usize,
    pub entry: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub checked: usize,
    /// Entries whose estimate came from a smaller step (see [`Kinks`]).
    pub reprobed: usize,
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

fn evaluate<F>(f: &F, inputs: &[Tensor]) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let out = f(&mut tape, &vars)?;
    Ok(tape.value(out).sum())
}

/// Compares the analytic gradient of `sum(f(inputs))` against central
/// differences on every entry of every input and returns the worst
/// relative error. Inputs are promoted to double precision.
pub fn grad_check<F>(f: F, inputs: &[Tensor], eps: f64) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let all = |_: usize, len: usize| (0..len).collect::<Vec<_>>();
    Ok(check_entries(&f, inputs, eps, Kinks::Strict, all)?.max_rel_error)
}

/// Like [`grad_check`], but only probes up to `per_input` randomly chosen
/// entries of each input. Used where full enumeration would need millions
/// of forward passes (whole-network parameter sets).
pub fn grad_check_sampled<F, R>(
    f: F,
    inputs: &[Tensor],
    eps: f64,
    per_input: usize,
    kinks: Kinks,
    rng: &mut R,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
    R: Rng + ?Sized,
{
    let picks: Vec<Vec<usize>> = inputs
        .iter()
        .map(|t| {
            if t.len() <= per_input {
                (0..t.len()).collect()
            } else {
                let mut idx = sample(rng, t.len(), per_input).into_vec();
                idx.sort_unstable();
                idx
            }
        })
        .collect();
    check_entries(&f, inputs, eps, kinks, |i, _| picks[i].clone())
}

fn central<F>(f: &F, inputs: &mut [Tensor], i: usize, j: usize, eps: f64) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let orig = inputs[i].data()[j];
    inputs[i].data_mut()[j] = orig + eps;
    let plus = evaluate(f, inputs);
    inputs[i].data_mut()[j] = orig - eps;
    let minus = evaluate(f, inputs);
    inputs[i].data_mut()[j] = orig;
    Ok((plus? - minus?) / (2.0 * eps))
}

pub fn check_entries<F, S>(f: &F, inputs: &[Tensor], eps: f64, kinks: Kinks, select: S) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
    S: Fn(usize, usize) -> Vec<usize>,
{
    let mut inputs: Vec<Tensor> = inputs.iter().map(|t| t.to_dtype(DType::F64)).collect();

    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let out = f(&mut tape, &vars)?;
    let root = tape.sum(out);
    let grads = tape.backward(root)?;

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        input: 0,
        entry: 0,
        analytic: 0.0,
        numeric: 0.0,
        checked: 0,
        reprobed: 0,
    };
    for i in 0..inputs.len() {
        let analytic = grads
            .get(vars[i])
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(inputs[i].shape()));
        for j in select(i, inputs[i].len()) {
            let a = analytic.data()[j];
            let mut numeric = central(f, &mut inputs, i, j, eps)?;
            if kinks == Kinks::Reprobe && relative_error(a, numeric) > REPROBE_ABOVE {
                let fine = central(f, &mut inputs, i, j, eps / 10.0)?;
                let finer = central(f, &mut inputs, i, j, eps / 100.0)?;
                if relative_error(fine, finer) <= REPROBE_AGREE {
                    numeric = fine;
                    report.reprobed += 1;
                }
            }
            let err = relative_error(a, numeric);
            report.checked += 1;
            if err > report.max_rel_error || report.checked == 1 {
                report = GradCheckReport {
                    max_rel_error: err,
                    input: i,
                    entry: j,
                    analytic: a,
                    numeric,
                    checked: report.checked,
                    reprobed: report.reprobed,
                };
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn linear_op_is_exact_up_to_rounding() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = Tensor::uniform(&[3, 4], -1.0, 1.0, &mut rng);
        let w = Tensor::uniform(&[5, 4], -1.0, 1.0, &mut rng);
        let b = Tensor::uniform(&[5], -1.0, 1.0, &mut rng);
        let err = grad_check(|t, v| t.fully_connected(v[0], v[1], v[2]), &[x, w, b], 1e-5).unwrap();
        assert!(err < 1e-8, "{err}");
    }

    #[test]
    fn detects_a_wrong_gradient() {
        // scale's backward is correct; feeding the same leaf twice through an
        // op with a non-linear response still checks out, while a bogus
        // analytic value would not. Use relu at a kink to provoke a mismatch.
        let x = Tensor::new(&[1], vec![0.0]).unwrap();
        let err = grad_check(|t, v| Ok(t.relu(v[0])), &[x], 1e-5).unwrap();
        assert!(err > 0.4, "relu at 0: analytic 0 vs numeric 0.5, got {err}");
    }

    #[test]
    fn reprobe_recovers_a_straddled_kink_only() {
        let relu = |t: &mut Tape, v: &[Var]| Ok(t.relu(v[0]));
        let near = [Tensor::new(&[1], vec![3e-6]).unwrap()];
        let all = |_: usize, n: usize| (0..n).collect::<Vec<_>>();
        let strict = check_entries(&relu, &near, 1e-5, Kinks::Strict, all).unwrap();
        assert!(strict.max_rel_error > 0.1);
        let re = check_entries(&relu, &near, 1e-5, Kinks::Reprobe, all).unwrap();
        assert!(re.max_rel_error < 1e-9 && re.reprobed == 1, "{re:?}");
        // exactly on the kink every step size straddles it
        let on = [Tensor::new(&[1], vec![0.0]).unwrap()];
        let re = check_entries(&relu, &on, 1e-5, Kinks::Reprobe, all).unwrap();
        assert!(re.max_rel_error > 0.4 && re.reprobed == 1);
    }
}
