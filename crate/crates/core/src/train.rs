//! Toy training loop: fit the ROA head (and everything under it) to the
//! labels of a few synthetic scenes.

use std::collections::BTreeMap;
use std::path::Path;

use crate::blocks::{apply_stat_updates, Forward};
use crate::config::{read_model_config, write_model_config};
use crate::error::{Error, Result};
use crate::io::CurvePoint;
use crate::labels::LabelConfig;
use crate::loss::{total_loss, LossWeights};
use crate::network::{ModelConfig, RoaModel, OUTPUT_STRIDE};
use crate::ops::norm::NormMode;
use crate::optim::{Adam, AdamState};
use crate::params::ParamStore;
use crate::scene::{make_sample, Sample, Scene};
use crate::tensor::Tensor;

pub const CONFIG_FILE: &str = "config.txt";
const STEP_KEY: &str = "train.step";
const HORIZON_KEY: &str = "train.decay_horizon";

/// Learning-rate schedule on top of the optimizer's base rate.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Schedule {
    #[default]
    Constant,
    /// Linear decay from the base rate towards 0 at step `horizon`.
    LinearDecay { horizon: u64 },
}

impl Schedule {
    pub fn factor(&self, step: u64) -> f64 {
        match *self {
            Schedule::Constant => 1.0,
            Schedule::LinearDecay { horizon } => {
                (1.0 - step as f64 / horizon.max(1) as f64).max(0.0)
            }
        }
    }
}

/// Rendered images and labels for every scene at the model's input size.
pub fn build_samples(scenes: &[Scene], cfg: &ModelConfig) -> Result<Vec<Sample>> {
    if scenes.is_empty() {
        return Err(Error::Config("training needs at least one scene".into()));
    }
    let labels = LabelConfig {
        stride: OUTPUT_STRIDE,
        region_type: cfg.region_type,
        ..Default::default()
    };
    scenes
        .iter()
        .map(|s| make_sample(s, cfg.input_height, cfg.input_width, &labels))
        .collect()
}

pub struct Trainer {
    pub model: RoaModel,
    pub store: ParamStore,
    pub adam: Adam,
    pub weights: LossWeights,
    pub schedule: Schedule,
    pub state: AdamState,
    pub samples: Vec<Sample>,
    pub step: u64,
}

impl Trainer {
    pub fn new(cfg: &ModelConfig, scenes: &[Scene], adam: Adam) -> Result<Self> {
        let samples = build_samples(scenes, cfg)?;
        let (model, store) = RoaModel::new(cfg)?;
        let state = AdamState::new(store.values());
        Ok(Trainer {
            model,
            store,
            adam,
            weights: LossWeights::default(),
            schedule: Schedule::Constant,
            state,
            samples,
            step: 0,
        })
    }

    /// One optimizer step on the next sample (round robin). The recorded
    /// loss is the one measured before the update.
    pub fn step(&mut self) -> Result<CurvePoint> {
        let sample = &self.samples[(self.step % self.samples.len() as u64) as usize];
        let (grads, updates, l_roa) = {
            let mut f = Forward::new(&self.store, NormMode::Train);
            let x = f.input(sample.images.clone());
            let y = f.input(sample.labels.clone());
            let vars = self.model.forward(&mut f, x, Some(y))?;
            let l_roa = vars.l_roa.expect("labels were given");
            // detection and depth terms live outside this model and are 0
            let objective = f.tape.scale(l_roa, self.weights.lambda2);
            let mut g = f.tape.backward(objective)?;
            let grads: Vec<Tensor> = f
                .param_vars()
                .iter()
                .zip(self.store.values())
                .map(|(&v, p)| g.take(v).unwrap_or_else(|| Tensor::zeros(p.shape())))
                .collect();
            (grads, f.take_updates(), f.tape.value(l_roa).data()[0])
        };
        let report = total_loss(0.0, 0.0, l_roa, &self.weights)?;
        let adam = Adam {
            lr: self.adam.lr * self.schedule.factor(self.step),
            ..self.adam
        };
        adam.step(self.store.values_mut(), &grads, &mut self.state)?;
        apply_stat_updates(&mut self.store, &updates);
        let point = CurvePoint {
            step: self.step as usize,
            l_roa: report.l_roa,
            total: report.total,
        };
        self.step += 1;
        Ok(point)
    }

    pub fn run(&mut self, steps: usize) -> Result<Vec<CurvePoint>> {
        (0..steps).map(|_| self.step()).collect()
    }

    /// Parameters, running statistics, optimizer state, step counter and
    /// the model config.
    pub fn save(&self, dir: &Path) -> Result<()> {
        let mut state: BTreeMap<String, Tensor> = self.state.to_named();
        state.insert(STEP_KEY.into(), Tensor::scalar(self.step as f64));
        if let Schedule::LinearDecay { horizon } = self.schedule {
            state.insert(HORIZON_KEY.into(), Tensor::scalar(horizon as f64));
        }
        self.store.save(dir, &state)?;
        write_model_config(&dir.join(CONFIG_FILE), &self.model.config)
    }

    pub fn resume(dir: &Path, scenes: &[Scene], adam: Adam) -> Result<Self> {
        let cfg = read_model_config(&dir.join(CONFIG_FILE))?;
        let mut trainer = Trainer::new(&cfg, scenes, adam)?;
        let named = trainer.store.load(dir)?;
        trainer.state = AdamState::from_named(&named, trainer.store.values())?;
        trainer.step = named
            .get(STEP_KEY)
            .ok_or_else(|| Error::Format(format!("checkpoint lacks {STEP_KEY}")))?
            .data()[0] as u64;
        if let Some(h) = named.get(HORIZON_KEY) {
            trainer.schedule = Schedule::LinearDecay { horizon: h.data()[0] as u64 };
        }
        Ok(trainer)
    }
}

/// Trains a fresh model for `steps` steps and returns the loss curve.
pub fn train_toy(
    scenes: &[Scene],
    cfg: &ModelConfig,
    steps: usize,
    adam: Adam,
    schedule: Schedule,
) -> Result<Vec<CurvePoint>> {
    let mut trainer = Trainer::new(cfg, scenes, adam)?;
    trainer.schedule = schedule;
    trainer.run(steps)
}

/// Trailing moving average with a full window; empty when the curve is
/// shorter than `window`.
pub fn moving_average(values: &[f64], window: usize) -> Vec<f64> {
    if window == 0 || values.len() < window {
        return Vec::new();
    }
    values.windows(window).map(|w| w.iter().sum::<f64>() / window as f64).collect()
}
