//! Two-stage gradient harmonization.
//!
//! Stage one (global) zeroes instances whose gradient norm reaches the top-T%
//! quantile of a bounded history of norms. Stage two (instance-wise) removes
//! pairwise conflicts: whenever an instance gradient has a negative dot
//! product with another instance's gradient, it is projected onto that
//! gradient's normal hyperplane. The update is the mean over all batch slots.

use std::collections::VecDeque;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{param, DohaError, Result};
use crate::rng;

pub const DEFAULT_T_PERCENT: f64 = 5.0;
pub const DEFAULT_QUEUE_LEN: usize = 150;
pub const DEFAULT_WARMUP: usize = 20;

/// Target norms below this are skipped during projection.
const TARGET_EPS: f64 = 1e-12;

/// Per-instance flat gradients for one optimization step.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientBatch {
    pub grads: Vec<Vec<f64>>,
    pub ids: Vec<String>,
}

impl GradientBatch {
    pub fn new(grads: Vec<Vec<f64>>, ids: Vec<String>) -> Result<Self> {
        if grads.is_empty() {
            return param("gradient batch must hold at least one instance");
        }
        if ids.len() != grads.len() {
            return param(format!("{} ids for {} gradients", ids.len(), grads.len()));
        }
        let dim = grads[0].len();
        if let Some(i) = grads.iter().position(|g| g.len() != dim) {
            return param(format!("gradient {i} has dimension {} (expected {dim})", grads[i].len()));
        }
        if grads.iter().flatten().any(|v| !v.is_finite()) {
            return Err(DohaError::Data("non-finite gradient entry".into()));
        }
        Ok(Self { grads, ids })
    }

    /// Batch with ids `"0"`, `"1"`, ...
    pub fn from_grads(grads: Vec<Vec<f64>>) -> Result<Self> {
        let ids = (0..grads.len()).map(|i| i.to_string()).collect();
        Self::new(grads, ids)
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.grads.first().map_or(0, Vec::len)
    }

    pub fn norms(&self) -> Vec<f64> {
        self.grads.iter().map(|g| norm(g)).collect()
    }
}

/// Bounded FIFO of historical gradient norms.
#[derive(Debug, Clone, PartialEq)]
pub struct NormQueue {
    norms: VecDeque<f64>,
    max_len: usize,
    warmup: usize,
}

impl Default for NormQueue {
    fn default() -> Self {
        Self::new(DEFAULT_QUEUE_LEN, DEFAULT_WARMUP)
    }
}

impl NormQueue {
    pub fn new(max_len: usize, warmup: usize) -> Self {
        Self { norms: VecDeque::with_capacity(max_len), max_len: max_len.max(1), warmup }
    }

    /// Queue pre-filled with `norms` (oldest first); only the newest
    /// `max_len` are retained.
    pub fn with_norms(max_len: usize, warmup: usize, norms: impl IntoIterator<Item = f64>) -> Self {
        let mut q = Self::new(max_len, warmup);
        q.extend(norms);
        q
    }

    pub fn push(&mut self, norm: f64) {
        if self.norms.len() == self.max_len {
            self.norms.pop_front();
        }
        self.norms.push_back(norm);
    }

    pub fn extend(&mut self, norms: impl IntoIterator<Item = f64>) {
        for n in norms {
            self.push(n);
        }
    }

    pub fn len(&self) -> usize {
        self.norms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.norms.is_empty()
    }

    pub fn max_len(&self) -> usize {
        self.max_len
    }

    pub fn warmup(&self) -> usize {
        self.warmup
    }

    pub fn is_warm(&self) -> bool {
        !self.norms.is_empty() && self.norms.len() >= self.warmup
    }

    /// Norms, oldest first.
    pub fn iter(&self) -> impl Iterator<Item = f64> + '_ {
        self.norms.iter().copied()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HarmonizerConfig {
    pub t_percent: f64,
    pub queue_len: usize,
    pub warmup: usize,
    pub seed: u64,
    /// Use the sifted (zeroed) gradients as projection targets instead of the
    /// raw ones, so sifted instances never deflect others.
    pub exclude_sifted_targets: bool,
}

impl Default for HarmonizerConfig {
    fn default() -> Self {
        Self {
            t_percent: DEFAULT_T_PERCENT,
            queue_len: DEFAULT_QUEUE_LEN,
            warmup: DEFAULT_WARMUP,
            seed: 0,
            exclude_sifted_targets: false,
        }
    }
}

impl HarmonizerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.t_percent > 0.0 && self.t_percent < 100.0) {
            return param(format!("T must lie in (0, 100), got {}", self.t_percent));
        }
        if self.queue_len == 0 {
            return param("queue length must be >= 1");
        }
        Ok(())
    }

    pub fn new_queue(&self) -> NormQueue {
        NormQueue::new(self.queue_len, self.warmup)
    }
}

fn norm(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Nearest-rank upper quantile: the element at 1-based rank
/// `ceil((1 - T/100) * len)` of the ascending norms.
pub fn top_quantile_threshold(queue: &NormQueue, t_percent: f64) -> Result<f64> {
    if queue.is_empty() {
        return Err(DohaError::State("norm queue is empty".into()));
    }
    if !(t_percent > 0.0 && t_percent < 100.0) {
        return param(format!("T must lie in (0, 100), got {t_percent}"));
    }
    let mut sorted: Vec<f64> = queue.iter().collect();
    sorted.sort_by(f64::total_cmp);
    let len = sorted.len();
    let exact = (100.0 - t_percent) * len as f64 / 100.0;
    let rank = ((exact - 1e-9).ceil() as usize).clamp(1, len);
    Ok(sorted[rank - 1])
}

/// Result of the global sifting stage.
#[derive(Debug, Clone, PartialEq)]
pub struct Sifted {
    pub batch: GradientBatch,
    pub kept: Vec<bool>,
    /// `None` while the queue is still warming up.
    pub threshold: Option<f64>,
}

/// Zeroes every instance whose norm reaches the queue's top-T% threshold.
/// Nothing is sifted while the queue holds fewer than `warmup` norms.
pub fn ggh_sift(batch: &GradientBatch, queue: &NormQueue, cfg: &HarmonizerConfig) -> Result<Sifted> {
    cfg.validate()?;
    GradientBatch::new(batch.grads.clone(), batch.ids.clone())?;
    if queue.is_empty() || queue.len() < cfg.warmup {
        return Ok(Sifted { batch: batch.clone(), kept: vec![true; batch.len()], threshold: None });
    }
    let threshold = top_quantile_threshold(queue, cfg.t_percent)?;
    let kept: Vec<bool> = batch.grads.iter().map(|g| norm(g) < threshold).collect();
    let grads = batch
        .grads
        .iter()
        .zip(&kept)
        .map(|(g, &k)| if k { g.clone() } else { vec![0.0; g.len()] })
        .collect();
    Ok(Sifted { batch: GradientBatch { grads, ids: batch.ids.clone() }, kept, threshold: Some(threshold) })
}

/// One applied projection of instance `i` against target `j`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ProjectionEvent {
    pub i: usize,
    pub j: usize,
    /// Cosine between the working gradient of `i` and target `j` before the step.
    pub cos_before: f64,
    /// The same cosine after the step (zero up to rounding).
    pub cos_after: f64,
}

/// Output of the instance-wise stage.
#[derive(Debug, Clone, PartialEq)]
pub struct Projected {
    pub batch: GradientBatch,
    pub events: Vec<ProjectionEvent>,
}

/// Projects each gradient away from every other gradient it conflicts with.
///
/// Targets are always the input vectors, never partially projected ones. The
/// visiting order of targets for instance `i` is a permutation drawn from the
/// stream keyed by `(seed, i)`.
pub fn igh_project(batch: &GradientBatch, seed: u64) -> Result<GradientBatch> {
    project_against(batch, &batch.grads, seed).map(|p| p.batch)
}

/// Like [`igh_project`] but with explicit targets and an event log.
pub fn project_against(working: &GradientBatch, targets: &[Vec<f64>], seed: u64) -> Result<Projected> {
    let n = working.len();
    if targets.len() != n {
        return param(format!("{} targets for {n} instances", targets.len()));
    }
    let target_sq: Vec<f64> = targets.iter().map(|t| dot(t, t)).collect();
    let mut grads = Vec::with_capacity(n);
    let mut events = Vec::new();
    for i in 0..n {
        let mut g = working.grads[i].clone();
        let mut order: Vec<usize> = (0..n).filter(|&j| j != i).collect();
        order.shuffle(&mut rng::keyed(seed, &[i as u64]));
        for j in order {
            let t = &targets[j];
            if target_sq[j].sqrt() < TARGET_EPS {
                continue;
            }
            let d = dot(&g, t);
            if d < 0.0 {
                let g_norm = norm(&g);
                let t_norm = target_sq[j].sqrt();
                let c = d / target_sq[j];
                for (gk, tk) in g.iter_mut().zip(t) {
                    *gk -= c * tk;
                }
                let after = dot(&g, t);
                if !after.is_finite() || g.iter().any(|v| !v.is_finite()) {
                    return Err(DohaError::Numeric(format!("projection of {i} on {j} diverged")));
                }
                let after_norm = norm(&g);
                events.push(ProjectionEvent {
                    i,
                    j,
                    cos_before: d / (g_norm * t_norm),
                    cos_after: if after_norm > 0.0 { after / (after_norm * t_norm) } else { 0.0 },
                });
            }
        }
        grads.push(g);
    }
    Ok(Projected { batch: GradientBatch { grads, ids: working.ids.clone() }, events })
}

/// Which stages of the harmonizer run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    PlainMean,
    GghOnly,
    IghOnly,
    FullDoha,
}

impl Mode {
    pub const ALL: [Mode; 4] = [Mode::PlainMean, Mode::GghOnly, Mode::IghOnly, Mode::FullDoha];

    pub fn sifts(self) -> bool {
        matches!(self, Mode::GghOnly | Mode::FullDoha)
    }

    pub fn projects(self) -> bool {
        matches!(self, Mode::IghOnly | Mode::FullDoha)
    }

    pub fn name(self) -> &'static str {
        match self {
            Mode::PlainMean => "plain-mean",
            Mode::GghOnly => "ggh-only",
            Mode::IghOnly => "igh-only",
            Mode::FullDoha => "full-doha",
        }
    }
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Mode {
    type Err = DohaError;

    fn from_str(s: &str) -> Result<Self> {
        Mode::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| DohaError::Parameter(format!("unknown mode {s:?}")))
    }
}

/// Everything produced by one harmonization step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub update: Vec<f64>,
    pub kept: Vec<bool>,
    pub threshold: Option<f64>,
    pub raw_norms: Vec<f64>,
    pub events: Vec<ProjectionEvent>,
    /// `(sifted, kept)` pairs where a sifted instance's raw gradient deflected
    /// a kept instance.
    pub sifted_deflections: Vec<(usize, usize)>,
}

/// Full two-stage step: sift, project, average, then record the raw norms.
///
/// `step` keys the permutation streams so every optimizer step draws fresh
/// target orders from `cfg.seed`.
pub fn harmonize_step(
    batch: &GradientBatch,
    queue: &mut NormQueue,
    cfg: &HarmonizerConfig,
    step: u64,
) -> Result<StepOutcome> {
    harmonize_step_with(batch, queue, cfg, step, Mode::FullDoha)
}

/// [`harmonize_step`] with individual stages switched by `mode`.
pub fn harmonize_step_with(
    batch: &GradientBatch,
    queue: &mut NormQueue,
    cfg: &HarmonizerConfig,
    step: u64,
    mode: Mode,
) -> Result<StepOutcome> {
    cfg.validate()?;
    let raw_norms = batch.norms();
    let sifted = if mode.sifts() {
        ggh_sift(batch, queue, cfg)?
    } else {
        Sifted { batch: batch.clone(), kept: vec![true; batch.len()], threshold: None }
    };
    let (harmonized, events) = if mode.projects() {
        let targets = if cfg.exclude_sifted_targets { &sifted.batch.grads } else { &batch.grads };
        let step_seed = rng::splitmix64(cfg.seed ^ rng::splitmix64(step));
        let p = project_against(&sifted.batch, targets, step_seed)?;
        (p.batch, p.events)
    } else {
        (sifted.batch, Vec::new())
    };
    let sifted_deflections = events
        .iter()
        .filter(|e| !sifted.kept[e.j] && sifted.kept[e.i])
        .map(|e| (e.j, e.i))
        .collect();
    let n = harmonized.len() as f64;
    let mut update = vec![0.0; harmonized.dim()];
    for g in &harmonized.grads {
        for (u, v) in update.iter_mut().zip(g) {
            *u += v;
        }
    }
    for u in update.iter_mut() {
        *u /= n;
    }
    queue.extend(raw_norms.iter().copied());
    Ok(StepOutcome {
        update,
        kept: sifted.kept,
        threshold: sifted.threshold,
        raw_norms,
        events,
        sifted_deflections,
    })
}
