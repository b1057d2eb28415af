use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{param, Result};
use crate::ssp::invert_hr;
use crate::toy::model::{Clip, ToyModel};

/// Heart-rate error metrics in bpm. `pearson` is `None` when either series
/// has zero variance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HrMetrics {
    pub mae: f64,
    pub rmse: f64,
    pub pearson: Option<f64>,
    pub n: usize,
}

pub fn hr_metrics(pred: &[f64], truth: &[f64]) -> Result<HrMetrics> {
    if pred.len() != truth.len() {
        return param(format!("{} predictions for {} targets", pred.len(), truth.len()));
    }
    if pred.len() < 2 {
        return param("need at least 2 items for HR metrics");
    }
    let n = pred.len() as f64;
    let mae = pred.iter().zip(truth).map(|(p, t)| (p - t).abs()).sum::<f64>() / n;
    let rmse = (pred.iter().zip(truth).map(|(p, t)| (p - t) * (p - t)).sum::<f64>() / n).sqrt();
    let mp = pred.iter().sum::<f64>() / n;
    let mt = truth.iter().sum::<f64>() / n;
    let (mut cov, mut vp, mut vt) = (0.0, 0.0, 0.0);
    for (p, t) in pred.iter().zip(truth) {
        cov += (p - mp) * (t - mt);
        vp += (p - mp) * (p - mp);
        vt += (t - mt) * (t - mt);
    }
    let pearson = (vp > 1e-12 && vt > 1e-12).then(|| (cov / (vp * vt).sqrt()).clamp(-1.0, 1.0));
    Ok(HrMetrics { mae, rmse, pearson, n: pred.len() })
}

/// Predicted heart rate per clip (forward pass, then map inversion).
pub fn predict_hr(model: &ToyModel, clips: &[&Clip], fs: f64) -> Result<Vec<f64>> {
    clips.par_iter().map(|c| invert_hr(&model.forward(c, fs)?)).collect()
}

pub fn evaluate_hr(model: &ToyModel, clips: &[&Clip], true_hrs: &[f64], fs: f64) -> Result<HrMetrics> {
    if clips.len() != true_hrs.len() {
        return param(format!("{} clips for {} heart rates", clips.len(), true_hrs.len()));
    }
    hr_metrics(&predict_hr(model, clips, fs)?, true_hrs)
}
