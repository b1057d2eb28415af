//! Self-similarity physiological (SSP) maps.
//!
//! A map holds the cosine similarity between every pair of stride-1 sliding
//! windows of a signal. Entry `(i, j)` is governed mostly by the lag `i - j`
//! and the cardiac period, which makes the representation tolerant to a phase
//! offset between a pulse estimate and its reference. The remaining dependence
//! on window phase vanishes only when a window spans whole half-periods.
//! Heart rate is read back from the mean of each sub-diagonal.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{param, Result};
use crate::signal::{
    bandpass_samples, dominant_frequency, find_peaks, synth_ppg, Signal, SynthSpec, HR_BAND_HI_HZ,
    HR_BAND_LO_HZ, HR_MAX_BPM, HR_MIN_BPM,
};

/// Default sliding-window length in samples.
pub const DEFAULT_L_WIN: usize = 17;

/// Norms below this are treated as zero by the cosine similarity.
pub const NORM_EPS: f64 = 1e-12;

/// Square self-similarity matrix, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct SspMap {
    size: usize,
    values: Vec<f64>,
    pub l_win: usize,
    pub fs: f64,
}

impl SspMap {
    /// Wraps an existing row-major matrix. No symmetry check is performed, so
    /// network outputs and hand-built fixtures can be represented too.
    pub fn from_values(size: usize, values: Vec<f64>, l_win: usize, fs: f64) -> Result<Self> {
        if values.len() != size * size {
            return param(format!(
                "map of size {size} needs {} values, got {}",
                size * size,
                values.len()
            ));
        }
        Ok(Self { size, values, l_win, fs })
    }

    pub fn from_rows(rows: &[Vec<f64>], l_win: usize, fs: f64) -> Result<Self> {
        let size = rows.len();
        if rows.iter().any(|r| r.len() != size) {
            return param("map rows must form a square matrix");
        }
        Self::from_values(size, rows.concat(), l_win, fs)
    }

    pub fn size(&self) -> usize {
        self.size
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.size + j]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.size..(i + 1) * self.size]
    }
}

/// Sub-diagonal means of an SSP map, indexed by lag.
#[derive(Debug, Clone, PartialEq)]
pub struct AutocorrSeq {
    pub values: Vec<f64>,
    pub fs: f64,
}

/// All stride-1 windows of length `l_win`.
pub fn slice_windows(signal: &Signal, l_win: usize) -> Result<Vec<&[f64]>> {
    check_geometry(signal.len(), l_win)?;
    Ok(signal.samples.windows(l_win).collect())
}

fn check_geometry(n: usize, l_win: usize) -> Result<()> {
    if l_win < 2 {
        return param(format!("window length must be >= 2, got {l_win}"));
    }
    if l_win > n {
        return param(format!("window length {l_win} exceeds signal length {n}"));
    }
    Ok(())
}

/// Cosine similarity; zero when either vector has norm below [`NORM_EPS`].
pub fn cosine_sim(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return param(format!("window lengths differ: {} vs {}", a.len(), b.len()));
    }
    Ok(cosine_from_parts(dot(a, b), dot(a, a), dot(b, b)))
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
fn cosine_from_parts(ab: f64, aa: f64, bb: f64) -> f64 {
    if aa.sqrt() < NORM_EPS || bb.sqrt() < NORM_EPS {
        return 0.0;
    }
    (ab / (aa * bb).sqrt()).clamp(-1.0, 1.0)
}

/// Pairwise cosine similarity of the rows of `vectors` (each of length `dim`).
///
/// The diagonal is exactly 1 for rows with non-negligible norm and the result
/// is exactly symmetric.
pub(crate) fn self_similarity(vectors: &[f64], dim: usize) -> (usize, Vec<f64>) {
    let n = vectors.len() / dim;
    let rows: Vec<&[f64]> = vectors.chunks_exact(dim).collect();
    let sq: Vec<f64> = rows.iter().map(|r| dot(r, r)).collect();
    let mut values = vec![0.0; n * n];
    values.par_chunks_mut(n.max(1)).enumerate().for_each(|(i, out)| {
        for (j, o) in out.iter_mut().enumerate() {
            *o = if i == j {
                if sq[i].sqrt() < NORM_EPS { 0.0 } else { 1.0 }
            } else {
                cosine_from_parts(dot(rows[i], rows[j]), sq[i], sq[j])
            };
        }
    });
    (n, values)
}

/// Builds the SSP map of `signal` with window length `l_win`.
pub fn build_ssp(signal: &Signal, l_win: usize) -> Result<SspMap> {
    check_geometry(signal.len(), l_win)?;
    let flat: Vec<f64> = signal.samples.windows(l_win).flatten().copied().collect();
    let (size, values) = self_similarity(&flat, l_win);
    Ok(SspMap { size, values, l_win, fs: signal.fs })
}

fn check_same_size(pred: &SspMap, label: &SspMap) -> Result<()> {
    if pred.size != label.size {
        return param(format!("map sizes differ: {} vs {}", pred.size, label.size));
    }
    Ok(())
}

/// Mean squared difference over all entries.
pub fn ssp_mse_loss(pred: &SspMap, label: &SspMap) -> Result<f64> {
    check_same_size(pred, label)?;
    Ok(mse(&pred.values, &label.values))
}

pub(crate) fn mse(pred: &[f64], label: &[f64]) -> f64 {
    let sum: f64 = pred.iter().zip(label).map(|(p, l)| (l - p) * (l - p)).sum();
    sum / pred.len() as f64
}

/// Gradient of [`ssp_mse_loss`] with respect to each entry of `pred`.
pub fn ssp_mse_grad(pred: &SspMap, label: &SspMap) -> Result<Vec<f64>> {
    check_same_size(pred, label)?;
    Ok(mse_grad(&pred.values, &label.values))
}

pub(crate) fn mse_grad(pred: &[f64], label: &[f64]) -> Vec<f64> {
    let scale = 2.0 / pred.len() as f64;
    pred.iter().zip(label).map(|(p, l)| scale * (p - l)).collect()
}

/// Mean of each sub-diagonal `{values[i][j] : i - j = lag}`.
pub fn autocorr_seq(map: &SspMap) -> AutocorrSeq {
    let n = map.size;
    let values = (0..n)
        .map(|lag| {
            let sum: f64 = (lag..n).map(|i| map.get(i, i - lag)).sum();
            sum / (n - lag) as f64
        })
        .collect();
    AutocorrSeq { values, fs: map.fs }
}

/// Heart rate (bpm) recovered from an SSP map.
///
/// The lag sequence is band-passed to the cardiac band, peaks at least
/// `ceil(fs / 3.5)` lags apart are located with parabolic sub-sample
/// refinement, and the median spacing gives the period. With fewer than two
/// peaks the in-band periodogram maximum is used instead. The result is
/// clamped to the admissible heart-rate range.
pub fn invert_hr(map: &SspMap) -> Result<f64> {
    let fs = map.fs;
    if !(fs.is_finite() && fs > 2.0 * HR_BAND_HI_HZ) {
        return param(format!("map rate {fs} Hz cannot represent the cardiac band"));
    }
    let min_size = ((2.0 * fs / HR_BAND_HI_HZ).ceil() as usize).max(8);
    if map.size < min_size {
        return param(format!("map size {} below minimum {min_size} for fs {fs}", map.size));
    }
    let seq = autocorr_seq(map);
    let filtered = bandpass_samples(&seq.values, fs, HR_BAND_LO_HZ, HR_BAND_HI_HZ);
    let min_distance = (fs / HR_BAND_HI_HZ).ceil() as usize;
    let peaks = find_peaks(&filtered, min_distance);
    let hr = if peaks.len() >= 2 {
        let refined: Vec<f64> = peaks.iter().map(|&p| refine_peak(&filtered, p)).collect();
        let mut spacings: Vec<f64> = refined.windows(2).map(|w| w[1] - w[0]).collect();
        60.0 * fs / median(&mut spacings)
    } else {
        60.0 * dominant_frequency(&filtered, fs, HR_BAND_LO_HZ, HR_BAND_HI_HZ)?
    };
    Ok(hr.clamp(HR_MIN_BPM, HR_MAX_BPM))
}

fn refine_peak(x: &[f64], p: usize) -> f64 {
    let (a, b, c) = (x[p - 1], x[p], x[p + 1]);
    let denom = a - 2.0 * b + c;
    if denom < 0.0 {
        p as f64 + (0.5 * (a - c) / denom).clamp(-0.5, 0.5)
    } else {
        p as f64
    }
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// How the delayed copy of a signal is produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DelayMode {
    /// Rotate the pulse component within the same record.
    Circular,
    /// Cut the delayed copy from a longer recording.
    Truncation,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DelayDeviation {
    pub delay: usize,
    pub max_interior_dev: f64,
}

/// For each delay, the largest `|R_delayed - R|` over the interior of the map
/// (the first and last `l_win` rows and columns are excluded).
pub fn phase_invariance_report(
    spec: &SynthSpec,
    delays: &[usize],
    l_win: usize,
    mode: DelayMode,
) -> Result<Vec<DelayDeviation>> {
    spec.validate()?;
    let period = spec.period_samples();
    if let Some(&d) = delays.iter().find(|&&d| d as f64 >= 2.0 * period) {
        return param(format!("delay {d} is not below two signal periods ({period:.2} samples)"));
    }
    let n = spec.n_frames;
    check_geometry(n, l_win)?;
    let size = n - l_win + 1;
    if size <= 2 * l_win {
        return param(format!("map of size {size} has no interior after trimming {l_win}"));
    }
    let max_delay = delays.iter().copied().max().unwrap_or(0);
    let (reference, long) = match mode {
        DelayMode::Circular => (synth_ppg(&SynthSpec { delay_samples: 0, ..spec.clone() })?, None),
        DelayMode::Truncation => {
            let long = synth_ppg(&SynthSpec {
                n_frames: n + max_delay,
                delay_samples: 0,
                ..spec.clone()
            })?;
            let reference = Signal::new(long.samples[max_delay..].to_vec(), spec.fs)?;
            (reference, Some(long))
        }
    };
    let base = build_ssp(&reference, l_win)?;
    delays
        .iter()
        .map(|&delay| {
            let delayed = match &long {
                None => synth_ppg(&SynthSpec { delay_samples: delay, ..spec.clone() })?,
                Some(long) => {
                    let start = max_delay - delay;
                    Signal::new(long.samples[start..start + n].to_vec(), spec.fs)?
                }
            };
            let map = build_ssp(&delayed, l_win)?;
            Ok(DelayDeviation { delay, max_interior_dev: max_interior_deviation(&base, &map, l_win) })
        })
        .collect()
}

pub(crate) fn max_interior_deviation(a: &SspMap, b: &SspMap, trim: usize) -> f64 {
    let n = a.size;
    let mut worst = 0.0f64;
    for i in trim..n - trim {
        for j in trim..n - trim {
            worst = worst.max((a.get(i, j) - b.get(i, j)).abs());
        }
    }
    worst
}
