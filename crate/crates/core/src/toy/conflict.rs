//! Gradient-conflict diagnostics across domains.

use serde::Serialize;

use crate::error::Result;
use crate::harmonizer::{igh_project, project_against, GradientBatch};
use crate::toy::corpus::CorpusItem;
use crate::toy::model::ToyModel;
use crate::toy::train::instance_gradients;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConflictReport {
    pub domains: Vec<usize>,
    /// Cosine between domain-mean gradients.
    pub before: Vec<Vec<f64>>,
    /// The same after projecting the domain means against each other.
    pub after: Vec<Vec<f64>>,
    /// Fraction of instance pairs with a negative gradient dot product.
    pub negative_pair_fraction: f64,
    /// Projection steps applied when harmonizing all instances together.
    pub projection_steps: usize,
    /// Largest `|cos|` between a projected gradient and its target right
    /// after the step.
    pub max_abs_cos_after: f64,
    /// No logged projection step made its pair more negative.
    pub conflict_never_worsened: bool,
}

impl ConflictReport {
    /// Smallest off-diagonal entry of `before`.
    pub fn min_inter_domain_cosine(&self) -> Option<f64> {
        let n = self.before.len();
        (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| self.before[i][j])
            .min_by(f64::total_cmp)
    }
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let ab: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let aa: f64 = a.iter().map(|x| x * x).sum();
    let bb: f64 = b.iter().map(|x| x * x).sum();
    if aa == 0.0 || bb == 0.0 {
        0.0
    } else {
        ab / (aa * bb).sqrt()
    }
}

fn cosine_matrix(v: &[Vec<f64>]) -> Vec<Vec<f64>> {
    v.iter().map(|a| v.iter().map(|b| cosine(a, b)).collect()).collect()
}

/// Mean gradient per domain and their pairwise cosines, before and after
/// instance-wise projection.
pub fn gradient_conflict_report(model: &ToyModel, items: &[&CorpusItem], seed: u64) -> Result<ConflictReport> {
    let grads: Vec<Vec<f64>> = instance_gradients(model, items)?.into_iter().map(|(_, g)| g).collect();
    let mut domains: Vec<usize> = items.iter().map(|it| it.domain).collect();
    domains.sort_unstable();
    domains.dedup();
    let dim = model.num_params();
    let means: Vec<Vec<f64>> = domains
        .iter()
        .map(|&d| {
            let mut m = vec![0.0; dim];
            let mut count = 0.0;
            for (it, g) in items.iter().zip(&grads) {
                if it.domain == d {
                    count += 1.0;
                    for (mk, gk) in m.iter_mut().zip(g) {
                        *mk += gk;
                    }
                }
            }
            m.iter_mut().for_each(|v| *v /= count);
            m
        })
        .collect();
    let before = cosine_matrix(&means);
    let projected = igh_project(&GradientBatch::from_grads(means)?, seed)?;
    let after = cosine_matrix(&projected.grads);

    let n = grads.len();
    let mut negative = 0usize;
    for i in 0..n {
        for j in i + 1..n {
            if grads[i].iter().zip(&grads[j]).map(|(a, b)| a * b).sum::<f64>() < 0.0 {
                negative += 1;
            }
        }
    }
    let pairs = (n * n.saturating_sub(1) / 2).max(1);
    let batch = GradientBatch::from_grads(grads)?;
    let run = project_against(&batch, &batch.grads, seed)?;
    let max_abs_cos_after = run.events.iter().map(|e| e.cos_after.abs()).fold(0.0, f64::max);
    let conflict_never_worsened = run.events.iter().all(|e| e.cos_after >= e.cos_before);
    Ok(ConflictReport {
        domains,
        before,
        after,
        negative_pair_fraction: negative as f64 / pairs as f64,
        projection_steps: run.events.len(),
        max_abs_cos_after,
        conflict_never_worsened,
    })
}
