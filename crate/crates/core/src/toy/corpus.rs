//! Synthetic multi-domain corpus of multi-channel traces with SSP labels.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{param, DohaError, Result};
use crate::rng;
use crate::signal::{bandpass, Signal, HR_BAND_HI_HZ, HR_BAND_LO_HZ, HR_MAX_BPM, HR_MIN_BPM};
use crate::ssp::{build_ssp, SspMap};
use crate::toy::model::Clip;

/// Acquisition conditions of one domain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainSpec {
    pub name: String,
    /// Heart-rate range in bpm, drawn uniformly per item.
    pub hr_range: [f64; 2],
    /// Label delay range in samples (inclusive), drawn uniformly per item.
    pub delay_range: [usize; 2],
    pub noise_sigma: f64,
    pub trend_slope: f64,
    /// Pulse gain in each channel.
    pub channel_mix: Vec<f64>,
    /// Peak amplitude of the periodic distractor before channel mixing.
    pub distractor_amp: f64,
    pub distractor_hz: f64,
    /// Distractor gain in each channel.
    pub distractor_mix: Vec<f64>,
    /// Relative amplitudes of pulse harmonics 2..K.
    #[serde(default)]
    pub harmonic_amps: Vec<f64>,
    /// Probability that an item is swamped by a broadband motion burst.
    #[serde(default)]
    pub burst_prob: f64,
    #[serde(default)]
    pub burst_amp: f64,
    /// Burst gain in each channel; empty means every channel at gain 1.
    #[serde(default)]
    pub burst_mix: Vec<f64>,
    /// The reference sensor picks up the burst too: the label follows the
    /// burst waveform instead of the pulse.
    #[serde(default)]
    pub burst_corrupts_label: bool,
    /// Pulse gain during a burst.
    #[serde(default = "unit")]
    pub burst_pulse_gain: f64,
    /// Probability that an item's label comes from an unrelated pulse
    /// (a failed reference recording).
    #[serde(default)]
    pub label_fault_prob: f64,
}

fn unit() -> f64 {
    1.0
}

impl DomainSpec {
    pub fn channels(&self) -> usize {
        self.channel_mix.len()
    }

    pub fn validate(&self) -> Result<()> {
        let [lo, hi] = self.hr_range;
        if !(HR_MIN_BPM <= lo && lo <= hi && hi <= HR_MAX_BPM) {
            return param(format!(
                "domain {}: hr_range [{lo}, {hi}] not inside [{HR_MIN_BPM}, {HR_MAX_BPM}]",
                self.name
            ));
        }
        if self.delay_range[0] > self.delay_range[1] {
            return param(format!("domain {}: empty delay range", self.name));
        }
        if self.channel_mix.is_empty() || self.distractor_mix.len() != self.channel_mix.len() {
            return param(format!("domain {}: channel and distractor mixes must match", self.name));
        }
        let finite = [self.noise_sigma, self.trend_slope, self.distractor_amp, self.distractor_hz, self.burst_amp, self.burst_pulse_gain]
            .iter()
            .chain(&self.channel_mix)
            .chain(&self.distractor_mix)
            .chain(&self.harmonic_amps)
            .all(|v| v.is_finite());
        let probs_ok = (0.0..=1.0).contains(&self.burst_prob) && (0.0..=1.0).contains(&self.label_fault_prob);
        if !self.burst_mix.is_empty() && self.burst_mix.len() != self.channel_mix.len() {
            return param(format!("domain {}: burst mix must match the channel count", self.name));
        }
        if !finite || self.noise_sigma < 0.0 || !probs_ok {
            return param(format!("domain {}: invalid amplitudes or probabilities", self.name));
        }
        Ok(())
    }
}

/// One training or evaluation example.
#[derive(Debug, Clone, PartialEq)]
pub struct CorpusItem {
    pub domain: usize,
    pub clip: Clip,
    /// Band-passed, delayed reference pulse.
    pub truth: Signal,
    pub label: SspMap,
    pub true_hr: f64,
    pub delay: usize,
    pub burst: bool,
    pub label_fault: bool,
}

/// Items from several domains sharing channel count, rate and window length.
#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub domains: Vec<DomainSpec>,
    pub fs: f64,
    pub l_win: usize,
    pub items: Vec<CorpusItem>,
}

impl Corpus {
    pub fn channels(&self) -> usize {
        self.domains.first().map_or(0, DomainSpec::channels)
    }

    pub fn domain_items(&self, domain: usize) -> impl Iterator<Item = &CorpusItem> {
        self.items.iter().filter(move |it| it.domain == domain)
    }
}

/// Geometry shared by every item of a corpus.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClipGeometry {
    pub frames: usize,
    pub fs: f64,
    pub l_win: usize,
}

/// Generates `per_domain` items for each domain.
///
/// Item `k` of domain `d` draws from the stream keyed by `(seed, d, k)`, so
/// any item can be regenerated alone. The clip carries the pulse at phase
/// zero; the label is built from the same pulse delayed by the item's delay,
/// band-passed to the cardiac band.
pub fn make_corpus(domains: &[DomainSpec], per_domain: usize, geom: ClipGeometry, seed: u64) -> Result<Corpus> {
    if domains.len() < 2 {
        return param(format!("need at least 2 domains, got {}", domains.len()));
    }
    let channels = domains[0].channels();
    for d in domains {
        d.validate()?;
        if d.channels() != channels {
            return param("all domains must have the same channel count");
        }
    }
    if geom.frames <= geom.l_win || !(geom.fs > 2.0 * HR_BAND_HI_HZ) {
        return param("clip must be longer than the window and fs must exceed 7 Hz");
    }
    let mut items = Vec::with_capacity(domains.len() * per_domain);
    for (d, spec) in domains.iter().enumerate() {
        for k in 0..per_domain {
            let mut r = rng::keyed(seed, &[d as u64, k as u64]);
            items.push(make_item(d, spec, geom, &mut r)?);
        }
    }
    Ok(Corpus { domains: domains.to_vec(), fs: geom.fs, l_win: geom.l_win, items })
}

fn make_item(domain: usize, spec: &DomainSpec, geom: ClipGeometry, r: &mut ChaCha8Rng) -> Result<CorpusItem> {
    let tau = std::f64::consts::TAU;
    let ClipGeometry { frames, fs, l_win } = geom;
    let [lo, hi] = spec.hr_range;
    let hr = if hi > lo { r.random_range(lo..hi) } else { lo };
    let phase = r.random_range(0.0..tau);
    let delay = r.random_range(spec.delay_range[0]..=spec.delay_range[1]);
    let f0 = hr / 60.0;
    let pulse_at = |t: f64| {
        let arg = tau * f0 * t / fs + phase;
        let mut v = arg.sin();
        for (h, a) in spec.harmonic_amps.iter().enumerate() {
            v += a * ((h + 2) as f64 * arg).sin();
        }
        v
    };
    let pulse: Vec<f64> = (0..frames).map(|t| pulse_at(t as f64)).collect();
    let delayed: Vec<f64> = (0..frames).map(|t| pulse_at(t as f64 - delay as f64)).collect();

    let distractor_phase = r.random_range(0.0..tau);
    let distractor: Vec<f64> = (0..frames)
        .map(|t| spec.distractor_amp * (tau * spec.distractor_hz * t as f64 / fs + distractor_phase).sin())
        .collect();

    let burst = spec.burst_prob > 0.0 && r.random_bool(spec.burst_prob);
    let burst_wave: Vec<f64> = if burst {
        let f = r.random_range(HR_BAND_LO_HZ..HR_BAND_HI_HZ);
        let ph = r.random_range(0.0..tau);
        (0..frames).map(|t| spec.burst_amp * (tau * f * t as f64 / fs + ph).sin()).collect()
    } else {
        Vec::new()
    };

    let label_fault = spec.label_fault_prob > 0.0 && r.random_bool(spec.label_fault_prob);
    let delayed = if burst && spec.burst_corrupts_label {
        burst_wave.clone()
    } else if label_fault {
        let other_hr = r.random_range(HR_MIN_BPM..HR_MAX_BPM);
        let ph = r.random_range(0.0..tau);
        (0..frames).map(|t| (tau * other_hr / 60.0 * t as f64 / fs + ph).sin()).collect()
    } else {
        delayed
    };

    let noise = Normal::new(0.0, spec.noise_sigma).map_err(|e| DohaError::Parameter(e.to_string()))?;
    let channels = spec.channels();
    let mut data = Vec::with_capacity(channels * frames);
    for c in 0..channels {
        for t in 0..frames {
            let mut v = spec.distractor_mix[c] * distractor[t];
            if burst {
                v += spec.burst_pulse_gain * spec.channel_mix[c] * pulse[t];
                v += spec.burst_mix.get(c).copied().unwrap_or(1.0) * burst_wave[t];
            } else {
                v += spec.channel_mix[c] * pulse[t];
            }
            v += spec.trend_slope * t as f64;
            if spec.noise_sigma > 0.0 {
                v += noise.sample(r);
            }
            data.push(v);
        }
    }
    let clip = Clip::new(channels, frames, data)?;
    let truth = bandpass(&Signal::new(delayed, fs)?, HR_BAND_LO_HZ, HR_BAND_HI_HZ)?;
    let label = build_ssp(&truth, l_win)?;
    Ok(CorpusItem { domain, clip, truth, label, true_hr: hr, delay, burst, label_fault })
}
