//! The shipped reference scenario: three acquisition domains that disagree
//! about one channel, a leave-one-domain-out protocol, and the mode ablation.

use serde::{Deserialize, Serialize};

use crate::error::{param, Result};
use crate::harmonizer::Mode;
use crate::toy::corpus::{make_corpus, ClipGeometry, Corpus, CorpusItem, DomainSpec};
use crate::toy::train::{train, TrainConfig, TrainOutcome};

const EVAL_SEED_SALT: u64 = 0x4556_414c;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub domains: Vec<DomainSpec>,
    pub train_per_domain: usize,
    pub eval_per_domain: usize,
    pub fs: f64,
    pub train: TrainConfig,
}

impl Scenario {
    /// Three domains over two channels. Channel 0 carries the pulse in every
    /// domain. Channel 1 is dominated by a strong in-band periodic distractor
    /// (flicker or periodic motion) in the office and outdoor domains, but in
    /// the lab it is a clean secondary view of the pulse, so the lab pulls the
    /// channel-1 weight up while the others push it down. Five percent of the
    /// training clips carry a motion burst in channel 1 that also corrupts the
    /// reference: the pulse fades and the label follows the burst. Training
    /// starts from an even channel mix.
    pub fn reference() -> Self {
        let domain = |name: &str, hr: [f64; 2], aux_pulse: f64, distractor_amp: f64, distractor_hz: f64| DomainSpec {
            name: name.into(),
            hr_range: hr,
            delay_range: [0, 12],
            noise_sigma: 0.05,
            trend_slope: 0.0,
            channel_mix: vec![1.0, aux_pulse],
            distractor_amp,
            distractor_hz,
            distractor_mix: vec![0.0, 1.0],
            harmonic_amps: vec![0.3],
            burst_prob: 0.05,
            burst_amp: 1.0,
            burst_mix: vec![0.0, 1.0],
            burst_corrupts_label: true,
            burst_pulse_gain: 0.05,
            label_fault_prob: 0.0,
        };
        Self {
            domains: vec![
                domain("lab", [55.0, 95.0], 8.0, 0.3, 2.6),
                domain("office", [70.0, 120.0], 0.0, 4.0, 0.9),
                domain("outdoor", [60.0, 140.0], 0.0, 4.0, 1.7),
            ],
            train_per_domain: 48,
            eval_per_domain: 24,
            fs: 30.0,
            train: TrainConfig { weight_mean: 0.1, weight_scale: 0.02, ..TrainConfig::default() },
        }
    }

    pub fn train_geometry(&self) -> ClipGeometry {
        ClipGeometry { frames: self.train.clip_len, fs: self.fs, l_win: self.train.l_win }
    }

    pub fn eval_geometry(&self) -> ClipGeometry {
        ClipGeometry { frames: self.train.eval_len, fs: self.fs, l_win: self.train.l_win }
    }

    /// Training corpus (short clips) and evaluation corpus (long clips).
    /// Evaluation recordings are free of bursts and label faults.
    pub fn corpora(&self, seed: u64) -> Result<(Corpus, Corpus)> {
        let train = make_corpus(&self.domains, self.train_per_domain, self.train_geometry(), seed)?;
        let clean: Vec<DomainSpec> = self
            .domains
            .iter()
            .map(|d| DomainSpec { burst_prob: 0.0, label_fault_prob: 0.0, ..d.clone() })
            .collect();
        let eval = make_corpus(&clean, self.eval_per_domain, self.eval_geometry(), seed ^ EVAL_SEED_SALT)?;
        Ok((train, eval))
    }

    /// Trains on every domain except `held_out` and scores on `held_out`.
    pub fn run_fold(
        &self,
        train_corpus: &Corpus,
        eval_corpus: &Corpus,
        held_out: usize,
        mode: Mode,
        seed: u64,
    ) -> Result<TrainOutcome> {
        if held_out >= self.domains.len() {
            return param(format!("held-out domain {held_out} out of range"));
        }
        let train_items: Vec<&CorpusItem> = train_corpus.items.iter().filter(|it| it.domain != held_out).collect();
        let holdout: Vec<&CorpusItem> = eval_corpus.domain_items(held_out).collect();
        let cfg = TrainConfig { mode, seed, ..self.train.clone() };
        train(&cfg, &train_items, &holdout)
    }

    /// Mean held-out MAE over all leave-one-domain-out folds for every
    /// `(seed, mode)` pair.
    pub fn ablation(&self, seeds: &[u64], modes: &[Mode]) -> Result<Vec<AblationRow>> {
        let mut rows = Vec::new();
        for &seed in seeds {
            let (tc, ec) = self.corpora(seed)?;
            for &mode in modes {
                let mut fold_mae = Vec::with_capacity(self.domains.len());
                for held_out in 0..self.domains.len() {
                    let out = self.run_fold(&tc, &ec, held_out, mode, seed)?;
                    fold_mae.push(out.final_holdout_mae().unwrap_or(f64::NAN));
                }
                let mean_mae = fold_mae.iter().sum::<f64>() / fold_mae.len() as f64;
                rows.push(AblationRow { seed, mode, fold_mae, mean_mae });
            }
        }
        Ok(rows)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub seed: u64,
    pub mode: Mode,
    pub fold_mae: Vec<f64>,
    pub mean_mae: f64,
}

/// Per-mode comparison against plain-mean across seeds.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModeSummary {
    pub mode: Mode,
    /// Seeds where this mode's MAE is at most the plain-mean MAE.
    pub wins: usize,
    pub seeds: usize,
    /// Median over seeds of `(plain - mode) / plain`.
    pub median_improvement: f64,
}

pub fn summarize(rows: &[AblationRow]) -> Vec<ModeSummary> {
    let plain = |seed| rows.iter().find(|r| r.seed == seed && r.mode == Mode::PlainMean).map(|r| r.mean_mae);
    Mode::ALL
        .into_iter()
        .filter(|&m| m != Mode::PlainMean)
        .filter_map(|mode| {
            let mut rel: Vec<f64> = Vec::new();
            let mut wins = 0;
            for r in rows.iter().filter(|r| r.mode == mode) {
                let base = plain(r.seed)?;
                if r.mean_mae <= base {
                    wins += 1;
                }
                rel.push((base - r.mean_mae) / base);
            }
            if rel.is_empty() {
                return None;
            }
            rel.sort_by(f64::total_cmp);
            let k = rel.len();
            let median = if k % 2 == 1 { rel[k / 2] } else { 0.5 * (rel[k / 2 - 1] + rel[k / 2]) };
            Some(ModeSummary { mode, wins, seeds: k, median_improvement: median })
        })
        .collect()
}
