//! Mini-batch training with per-instance gradients, harmonization and Adam.

use std::time::Instant;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{param, DohaError, Result};
use crate::harmonizer::{harmonize_step_with, GradientBatch, HarmonizerConfig, Mode};
use crate::rng;
use crate::ssp::DEFAULT_L_WIN;
use crate::toy::corpus::CorpusItem;
use crate::toy::eval::{evaluate_hr, HrMetrics};
use crate::toy::model::{Clip, ToyModel};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub clip_len: usize,
    pub eval_len: usize,
    pub epochs: usize,
    pub lr_max: f64,
    pub lr_min: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub l_win: usize,
    /// Projection width; defaults to `l_win`.
    pub proj_dim: Option<usize>,
    /// Mean and standard deviation of the initial channel weights.
    pub weight_mean: f64,
    pub weight_scale: f64,
    /// Standard deviation of the jitter added to the identity projection.
    pub proj_jitter: f64,
    pub harmonizer: HarmonizerConfig,
    pub mode: Mode,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 4,
            clip_len: 75,
            eval_len: 300,
            epochs: 20,
            lr_max: 5e-4,
            lr_min: 1e-6,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            l_win: DEFAULT_L_WIN,
            proj_dim: None,
            weight_mean: 0.0,
            weight_scale: 0.5,
            proj_jitter: 0.1,
            harmonizer: HarmonizerConfig::default(),
            mode: Mode::FullDoha,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return param("batch_size must be >= 1");
        }
        if self.clip_len <= self.l_win {
            return param(format!("clip_len {} must exceed l_win {}", self.clip_len, self.l_win));
        }
        if self.epochs == 0 {
            return param("epochs must be >= 1");
        }
        if !(self.lr_max >= self.lr_min && self.lr_min >= 0.0) {
            return param("need lr_max >= lr_min >= 0");
        }
        self.harmonizer.validate()
    }

    pub fn proj_dim(&self) -> usize {
        self.proj_dim.unwrap_or(self.l_win)
    }

    pub fn init_model(&self, channels: usize) -> Result<ToyModel> {
        ToyModel::init(channels, self.l_win, self.proj_dim(), self.weight_mean, self.weight_scale, self.proj_jitter, self.seed)
    }
}

/// Cosine decay from `lr_max` at step 0 to `lr_min` at `total_steps - 1`.
pub fn cosine_lr(step: usize, total_steps: usize, lr_max: f64, lr_min: f64) -> f64 {
    if total_steps <= 1 {
        return lr_max;
    }
    let progress = (step.min(total_steps - 1)) as f64 / (total_steps - 1) as f64;
    lr_min + 0.5 * (lr_max - lr_min) * (1.0 + (std::f64::consts::PI * progress).cos())
}

/// Adaptive-moment optimizer state.
#[derive(Debug, Clone)]
pub struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
    beta1: f64,
    beta2: f64,
    eps: f64,
}

impl Adam {
    pub fn new(dim: usize, beta1: f64, beta2: f64, eps: f64) -> Self {
        Self { m: vec![0.0; dim], v: vec![0.0; dim], t: 0, beta1, beta2, eps }
    }

    /// Applies one descent step along `grad` in place.
    pub fn step(&mut self, params: &mut [f64], grad: &[f64], lr: f64) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for (((p, g), m), v) in params.iter_mut().zip(grad).zip(&mut self.m).zip(&mut self.v) {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            *p -= lr * (*m / c1) / ((*v / c2).sqrt() + self.eps);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub mode: Mode,
    pub train_loss: f64,
    pub holdout: Option<HrMetrics>,
    pub wall_secs: f64,
    /// Instances zeroed by the sifting stage during this epoch.
    pub sifted: usize,
    /// Projection steps applied during this epoch.
    pub projections: usize,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: ToyModel,
    /// Mean training loss of the initial model.
    pub init_loss: f64,
    pub init_holdout: Option<HrMetrics>,
    pub metrics: Vec<EpochMetrics>,
    /// Times a sifted instance deflected a kept one.
    pub sifted_deflections: usize,
}

impl TrainOutcome {
    pub fn final_holdout_mae(&self) -> Option<f64> {
        self.metrics.last().and_then(|m| m.holdout).map(|h| h.mae)
    }
}

fn holdout_metrics(model: &ToyModel, holdout: &[&CorpusItem]) -> Result<Option<HrMetrics>> {
    if holdout.len() < 2 {
        return Ok(None);
    }
    let clips: Vec<&Clip> = holdout.iter().map(|it| &it.clip).collect();
    let hrs: Vec<f64> = holdout.iter().map(|it| it.true_hr).collect();
    evaluate_hr(model, &clips, &hrs, holdout[0].label.fs).map(Some)
}

/// Mean loss of `model` over `items`.
pub fn mean_loss(model: &ToyModel, items: &[&CorpusItem]) -> Result<f64> {
    let losses: Vec<f64> = items
        .par_iter()
        .map(|it| model.loss(&it.clip, &it.label))
        .collect::<Result<_>>()?;
    Ok(losses.iter().sum::<f64>() / losses.len().max(1) as f64)
}

/// Per-instance losses and gradients, in input order.
pub fn instance_gradients(model: &ToyModel, items: &[&CorpusItem]) -> Result<Vec<(f64, Vec<f64>)>> {
    items.par_iter().map(|it| model.backward(&it.clip, &it.label)).collect()
}

/// Trains a fresh model on `train_items`, scoring `holdout` after every epoch.
pub fn train(cfg: &TrainConfig, train_items: &[&CorpusItem], holdout: &[&CorpusItem]) -> Result<TrainOutcome> {
    cfg.validate()?;
    let first = train_items.first().ok_or_else(|| DohaError::Parameter("training corpus is empty".into()))?;
    let mut model = cfg.init_model(first.clip.channels())?;
    let init_loss = mean_loss(&model, train_items)?;
    let init_holdout = holdout_metrics(&model, holdout)?;

    let hcfg = HarmonizerConfig { seed: cfg.seed, ..cfg.harmonizer.clone() };
    let mut queue = hcfg.new_queue();
    let mut adam = Adam::new(model.num_params(), cfg.beta1, cfg.beta2, cfg.adam_eps);
    let mut params = model.params();
    let steps_per_epoch = train_items.len().div_ceil(cfg.batch_size);
    let total_steps = steps_per_epoch * cfg.epochs;
    let mut step = 0usize;
    let mut metrics = Vec::with_capacity(cfg.epochs);
    let mut sifted_deflections = 0;

    for epoch in 0..cfg.epochs {
        let started = Instant::now();
        let mut order: Vec<usize> = (0..train_items.len()).collect();
        order.shuffle(&mut rng::keyed(cfg.seed, &[0x45_504f_4348, epoch as u64]));
        let (mut loss_sum, mut sifted, mut projections) = (0.0, 0, 0);
        for chunk in order.chunks(cfg.batch_size) {
            let batch_items: Vec<&CorpusItem> = chunk.iter().map(|&i| train_items[i]).collect();
            let results = instance_gradients(&model, &batch_items)?;
            let mut grads = Vec::with_capacity(results.len());
            for (loss, g) in results {
                if !loss.is_finite() {
                    return Err(DohaError::Numeric(format!("loss diverged at epoch {} step {step}", epoch + 1)));
                }
                loss_sum += loss;
                grads.push(g);
            }
            let batch = GradientBatch::new(grads, chunk.iter().map(|i| i.to_string()).collect())?;
            let out = harmonize_step_with(&batch, &mut queue, &hcfg, step as u64, cfg.mode)?;
            sifted += out.kept.iter().filter(|k| !**k).count();
            projections += out.events.len();
            sifted_deflections += out.sifted_deflections.len();
            let lr = cosine_lr(step, total_steps, cfg.lr_max, cfg.lr_min);
            adam.step(&mut params, &out.update, lr);
            model.set_params(&params).map_err(|_| {
                DohaError::Numeric(format!("parameters diverged at epoch {} step {step}", epoch + 1))
            })?;
            step += 1;
        }
        let holdout_m = holdout_metrics(&model, holdout)?;
        metrics.push(EpochMetrics {
            epoch: epoch + 1,
            mode: cfg.mode,
            train_loss: loss_sum / train_items.len() as f64,
            holdout: holdout_m,
            wall_secs: started.elapsed().as_secs_f64(),
            sifted,
            projections,
        });
    }
    Ok(TrainOutcome { model, init_loss, init_holdout, metrics, sifted_deflections })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lr_schedule_endpoints_and_monotone() {
        let total = 320;
        assert_eq!(cosine_lr(0, total, 5e-4, 1e-6), 5e-4);
        assert!((cosine_lr(total - 1, total, 5e-4, 1e-6) - 1e-6).abs() < 1e-18);
        let mut prev = f64::INFINITY;
        for s in 0..total {
            let lr = cosine_lr(s, total, 5e-4, 1e-6);
            assert!(lr <= prev);
            prev = lr;
        }
    }

    #[test]
    fn adam_moves_against_gradient() {
        let mut adam = Adam::new(2, 0.9, 0.999, 1e-8);
        let mut p = vec![1.0, -1.0];
        adam.step(&mut p, &[2.0, -0.5], 0.1);
        assert!((p[0] - 0.9).abs() < 1e-6);
        assert!((p[1] + 0.9).abs() < 1e-6);
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig { batch_size: 0, ..Default::default() }.validate().is_err());
        assert!(TrainConfig { clip_len: 17, ..Default::default() }.validate().is_err());
        assert!(TrainConfig::default().validate().is_ok());
    }
}
