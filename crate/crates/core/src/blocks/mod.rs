//! Network building blocks: the Large Kernel Basic (LKB) module and the
//! layers it is made of.
//!
//! Blocks only hold [`ParamId`]s into a [`ParamStore`]; a [`Forward`] binds
//! the store to a fresh [`Tape`] so one set of blocks serves any number of
//! forward/backward passes.

mod aspp;
mod basic;
mod dcn;
mod layers;
mod lkb;
mod se;

pub use aspp::Aspp;
pub use basic::BasicBlock;
pub use dcn::{dcn_base_grid, Dcn, OFFSET_KERNEL};
pub use layers::{Conv, Linear, Norm};
pub use lkb::{Lkb, LkbConfig};
pub use se::SqueezeExcite;

use crate::autodiff::{Tape, Var};
use crate::ops::norm::{NormMode, BN_MOMENTUM};
use crate::params::{BufferId, ParamId, ParamStore};
use crate::tensor::Tensor;

/// Running-statistics update produced by a train-mode normalization.
#[derive(Clone, Debug)]
pub struct StatUpdate {
    pub mean: BufferId,
    pub var: BufferId,
    pub batch_mean: Vec<f64>,
    pub batch_var: Vec<f64>,
}

pub struct Forward<'s> {
    pub tape: Tape,
    vars: Vec<Var>,
    store: &'s ParamStore,
    pub norm: NormMode,
    updates: Vec<StatUpdate>,
}

impl<'s> Forward<'s> {
    pub fn new(store: &'s ParamStore, norm: NormMode) -> Self {
        let mut tape = Tape::new();
        let vars = store.bind(&mut tape);
        Forward {
            tape,
            vars,
            store,
            norm,
            updates: Vec::new(),
        }
    }

    /// Wraps an existing tape whose leaves `vars` stand in for the store's
    /// parameters (same order). Used to differentiate w.r.t. parameters
    /// supplied from outside, e.g. by the gradient checker.
    pub fn with_vars(tape: Tape, vars: Vec<Var>, store: &'s ParamStore, norm: NormMode) -> Self {
        assert_eq!(vars.len(), store.len(), "one var per parameter");
        Forward {
            tape,
            vars,
            store,
            norm,
            updates: Vec::new(),
        }
    }

    pub fn param(&self, id: ParamId) -> Var {
        self.vars[id.0]
    }

    /// Tape variables of all parameters, indexed like the store.
    pub fn param_vars(&self) -> &[Var] {
        &self.vars
    }

    pub fn store(&self) -> &'s ParamStore {
        self.store
    }

    pub fn input(&mut self, t: Tensor) -> Var {
        self.tape.leaf(t.to_dtype(self.store.dtype()))
    }

    pub(crate) fn record(&mut self, update: StatUpdate) {
        self.updates.push(update);
    }

    pub fn take_updates(&mut self) -> Vec<StatUpdate> {
        std::mem::take(&mut self.updates)
    }
}

/// Folds batch statistics into the running buffers.
pub fn apply_stat_updates(store: &mut ParamStore, updates: &[StatUpdate]) {
    for u in updates {
        for (id, batch) in [(u.mean, &u.batch_mean), (u.var, &u.batch_var)] {
            let running = store.buffer(id);
            let next: Vec<f64> = running
                .data()
                .iter()
                .zip(batch)
                .map(|(r, b)| (1.0 - BN_MOMENTUM) * r + BN_MOMENTUM * b)
                .collect();
            let t = Tensor::new(running.shape(), next).expect("same shape");
            store.set_buffer(id, t);
        }
    }
}
