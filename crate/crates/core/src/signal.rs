//! Uniformly sampled 1-D signals: band-pass filtering, peak picking,
//! synthetic pulse generation, and a periodogram heart-rate oracle.

use rand_distr::{Distribution, Normal};
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{param, DohaError, Result};
use crate::rng;

/// Lower edge of the cardiac band in Hz.
pub const HR_BAND_LO_HZ: f64 = 0.7;
/// Upper edge of the cardiac band in Hz.
pub const HR_BAND_HI_HZ: f64 = 3.5;
/// Admissible heart-rate range in beats per minute.
pub const HR_MIN_BPM: f64 = 42.0;
pub const HR_MAX_BPM: f64 = 210.0;

/// A uniformly sampled waveform.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Signal {
    pub fs: f64,
    pub samples: Vec<f64>,
}

impl Signal {
    pub fn new(samples: Vec<f64>, fs: f64) -> Result<Self> {
        if !(fs.is_finite() && fs > 0.0) {
            return param(format!("sampling rate must be finite and > 0, got {fs}"));
        }
        if samples.is_empty() {
            return param("signal must contain at least one sample");
        }
        if let Some(i) = samples.iter().position(|v| !v.is_finite()) {
            return Err(DohaError::Data(format!("non-finite sample at index {i}")));
        }
        Ok(Self { fs, samples })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_secs(&self) -> f64 {
        (self.samples.len().saturating_sub(1)) as f64 / self.fs
    }
}

/// Parameters of a synthetic harmonic pulse train.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub hr_bpm: f64,
    pub fs: f64,
    pub n_frames: usize,
    /// Relative amplitudes of harmonics 2..K; the fundamental has amplitude 1.
    #[serde(default)]
    pub harmonic_amps: Vec<f64>,
    #[serde(default)]
    pub noise_sigma: f64,
    #[serde(default)]
    pub delay_samples: usize,
    #[serde(default)]
    pub trend_slope: f64,
    #[serde(default)]
    pub seed: u64,
}

impl SynthSpec {
    /// Clean sinusoid at `hr_bpm` with no harmonics, noise, delay or trend.
    pub fn clean(hr_bpm: f64, fs: f64, n_frames: usize) -> Self {
        Self {
            hr_bpm,
            fs,
            n_frames,
            harmonic_amps: Vec::new(),
            noise_sigma: 0.0,
            delay_samples: 0,
            trend_slope: 0.0,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(HR_MIN_BPM..=HR_MAX_BPM).contains(&self.hr_bpm) {
            return param(format!(
                "hr_bpm {} outside [{HR_MIN_BPM}, {HR_MAX_BPM}] bpm",
                self.hr_bpm
            ));
        }
        if !(self.fs.is_finite() && self.fs > 0.0) {
            return param(format!("fs must be > 0, got {}", self.fs));
        }
        if self.n_frames == 0 {
            return param("n_frames must be >= 1");
        }
        if 60.0 * self.fs / self.hr_bpm < 4.0 {
            return param("fewer than 4 samples per beat (60*fs/hr_bpm < 4)");
        }
        if !(self.noise_sigma.is_finite() && self.noise_sigma >= 0.0) {
            return param("noise_sigma must be finite and >= 0");
        }
        if !self.trend_slope.is_finite() || self.harmonic_amps.iter().any(|a| !a.is_finite()) {
            return param("trend_slope and harmonic_amps must be finite");
        }
        Ok(())
    }

    pub fn period_samples(&self) -> f64 {
        60.0 * self.fs / self.hr_bpm
    }
}

/// Zero-phase band-pass by hard masking of DFT bins outside `[lo_hz, hi_hz]`.
pub fn bandpass(signal: &Signal, lo_hz: f64, hi_hz: f64) -> Result<Signal> {
    let nyquist = signal.fs / 2.0;
    if !(lo_hz > 0.0 && lo_hz < hi_hz && hi_hz < nyquist) {
        return param(format!(
            "band [{lo_hz}, {hi_hz}] Hz invalid for fs {} (need 0 < lo < hi < {nyquist})",
            signal.fs
        ));
    }
    if signal.len() < 8 {
        return param(format!("band-pass needs >= 8 samples, got {}", signal.len()));
    }
    if signal.samples.iter().any(|v| !v.is_finite()) {
        return Err(DohaError::Data("non-finite sample in band-pass input".into()));
    }
    let samples = bandpass_samples(&signal.samples, signal.fs, lo_hz, hi_hz);
    Ok(Signal { fs: signal.fs, samples })
}

pub(crate) fn bandpass_samples(x: &[f64], fs: f64, lo_hz: f64, hi_hz: f64) -> Vec<f64> {
    let n = x.len();
    let mut planner = FftPlanner::<f64>::new();
    let fwd = planner.plan_fft_forward(n);
    let inv = planner.plan_fft_inverse(n);
    let mut buf: Vec<Complex<f64>> = x.iter().map(|&v| Complex::new(v, 0.0)).collect();
    fwd.process(&mut buf);
    for (k, c) in buf.iter_mut().enumerate() {
        let f = k.min(n - k) as f64 * fs / n as f64;
        if f < lo_hz || f > hi_hz {
            *c = Complex::new(0.0, 0.0);
        }
    }
    inv.process(&mut buf);
    let scale = 1.0 / n as f64;
    buf.iter().map(|c| c.re * scale).collect()
}

/// Strict local maxima separated by at least `min_distance` samples.
///
/// Conflicts are resolved greedily by amplitude; equal amplitudes favour the
/// smaller index.
pub fn detect_peaks(signal: &Signal, min_distance: usize) -> Vec<usize> {
    find_peaks(&signal.samples, min_distance)
}

pub(crate) fn find_peaks(x: &[f64], min_distance: usize) -> Vec<usize> {
    let min_distance = min_distance.max(1);
    let candidates: Vec<usize> = (1..x.len().saturating_sub(1))
        .filter(|&i| x[i] > x[i - 1] && x[i] > x[i + 1])
        .collect();
    if min_distance == 1 || candidates.len() < 2 {
        return candidates;
    }
    let mut order: Vec<usize> = (0..candidates.len()).collect();
    // stable sort keeps smaller indices first among equal amplitudes
    order.sort_by(|&a, &b| x[candidates[b]].total_cmp(&x[candidates[a]]));
    let mut kept = vec![false; candidates.len()];
    let mut removed = vec![false; candidates.len()];
    for &c in &order {
        if removed[c] {
            continue;
        }
        kept[c] = true;
        let pos = candidates[c];
        let mut k = c;
        while k > 0 && pos - candidates[k - 1] < min_distance {
            k -= 1;
            removed[k] = true;
        }
        let mut k = c + 1;
        while k < candidates.len() && candidates[k] - pos < min_distance {
            removed[k] = true;
            k += 1;
        }
    }
    candidates
        .into_iter()
        .zip(kept)
        .filter_map(|(p, k)| k.then_some(p))
        .collect()
}

/// Harmonic pulse train with circular delay, linear trend and white noise.
///
/// The delay rotates the harmonic component only; trend and noise are added
/// after the rotation. Noise comes from `ChaCha8Rng::seed_from_u64(seed)`
/// through `rand_distr::Normal`.
pub fn synth_ppg(spec: &SynthSpec) -> Result<Signal> {
    spec.validate()?;
    let n = spec.n_frames;
    let f0 = spec.hr_bpm / 60.0;
    let tau = std::f64::consts::TAU;
    let pulse: Vec<f64> = (0..n)
        .map(|t| {
            let t = t as f64;
            let mut v = (tau * f0 * t / spec.fs).sin();
            for (h, a) in spec.harmonic_amps.iter().enumerate() {
                let k = (h + 2) as f64;
                v += a * (tau * k * f0 * t / spec.fs).sin();
            }
            v
        })
        .collect();
    let delay = spec.delay_samples % n;
    let mut samples: Vec<f64> = (0..n)
        .map(|t| pulse[(t + n - delay) % n] + spec.trend_slope * t as f64)
        .collect();
    if spec.noise_sigma > 0.0 {
        let normal = Normal::new(0.0, spec.noise_sigma)
            .map_err(|e| DohaError::Parameter(e.to_string()))?;
        let mut rng = rng::seeded(spec.seed);
        for v in samples.iter_mut() {
            *v += normal.sample(&mut rng);
        }
    }
    Signal::new(samples, spec.fs)
}

/// Heart rate in bpm from the in-band periodogram peak.
///
/// The mean is removed and the signal zero-padded to at least eight times its
/// length before the peak bin is refined by parabolic interpolation.
pub fn fft_hr_oracle(signal: &Signal) -> Result<f64> {
    if signal.len() < 64 {
        return param(format!("oracle needs >= 64 samples, got {}", signal.len()));
    }
    dominant_frequency(&signal.samples, signal.fs, HR_BAND_LO_HZ, HR_BAND_HI_HZ)
        .map(|f| 60.0 * f)
}

pub(crate) fn dominant_frequency(x: &[f64], fs: f64, lo_hz: f64, hi_hz: f64) -> Result<f64> {
    let n = x.len();
    let mean = x.iter().sum::<f64>() / n as f64;
    let energy: f64 = x.iter().map(|v| v * v).sum();
    let centered_energy: f64 = x.iter().map(|v| (v - mean) * (v - mean)).sum();
    if !(centered_energy > 1e-20 * energy.max(f64::MIN_POSITIVE)) {
        return Err(DohaError::Data("signal has no in-band power".into()));
    }
    let padded = (8 * n).next_power_of_two().max(1024);
    let mut buf = vec![Complex::new(0.0, 0.0); padded];
    for (b, &v) in buf.iter_mut().zip(x) {
        *b = Complex::new(v - mean, 0.0);
    }
    FftPlanner::<f64>::new().plan_fft_forward(padded).process(&mut buf);
    let half = padded / 2;
    let power: Vec<f64> = buf[..=half].iter().map(|c| c.norm_sqr()).collect();
    let df = fs / padded as f64;
    let lo_bin = (lo_hz / df).ceil() as usize;
    let hi_bin = ((hi_hz / df).floor() as usize).min(half);
    if lo_bin > hi_bin {
        return Err(DohaError::Data("band contains no frequency bins".into()));
    }
    let (peak, &peak_power) = power[lo_bin..=hi_bin]
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1).then(b.0.cmp(&a.0)))
        .map(|(i, p)| (i + lo_bin, p))
        .expect("non-empty band");
    if !(peak_power > 0.0) {
        return Err(DohaError::Data("all in-band power is zero".into()));
    }
    let mut offset = 0.0;
    if peak > 0 && peak < half {
        let (a, b, c) = (power[peak - 1], power[peak], power[peak + 1]);
        let denom = a - 2.0 * b + c;
        if denom < 0.0 {
            offset = (0.5 * (a - c) / denom).clamp(-0.5, 0.5);
        }
    }
    Ok((peak as f64 + offset) * df)
}

/// Linear interpolation onto a uniform grid at `target_fs` covering the same
/// time span. The first sample is always kept; the last is kept whenever the
/// span is a whole number of target periods.
pub fn resample_linear(signal: &Signal, target_fs: f64) -> Result<Signal> {
    if !(target_fs.is_finite() && target_fs > 0.0) {
        return param(format!("target_fs must be > 0, got {target_fs}"));
    }
    let n = signal.len();
    let duration = signal.duration_secs();
    let m = (duration * target_fs + 1e-9).floor() as usize + 1;
    if m < 2 {
        return param(format!("target grid has {m} sample(s); need at least 2"));
    }
    if target_fs == signal.fs {
        return Ok(signal.clone());
    }
    let x = &signal.samples;
    let samples = (0..m)
        .map(|k| {
            let pos = k as f64 * signal.fs / target_fs;
            let i = (pos.floor() as usize).min(n - 1);
            if i + 1 >= n {
                return x[n - 1];
            }
            let frac = pos - i as f64;
            if frac == 0.0 {
                x[i]
            } else {
                x[i] + frac * (x[i + 1] - x[i])
            }
        })
        .collect();
    Signal::new(samples, target_fs)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sine(freq: f64, fs: f64, n: usize) -> Signal {
        let s = (0..n)
            .map(|t| (std::f64::consts::TAU * freq * t as f64 / fs).sin())
            .collect();
        Signal::new(s, fs).unwrap()
    }

    fn rms(x: &[f64]) -> f64 {
        (x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64).sqrt()
    }

    #[test]
    fn signal_rejects_bad_input() {
        assert!(Signal::new(vec![], 30.0).is_err());
        assert!(Signal::new(vec![1.0], 0.0).is_err());
        assert!(matches!(Signal::new(vec![f64::NAN], 30.0), Err(DohaError::Data(_))));
    }

    #[test]
    fn bandpass_keeps_in_band_sinusoid() {
        let s = sine(1.2, 30.0, 300);
        let y = bandpass(&s, 0.7, 3.5).unwrap();
        for t in 30..270 {
            assert!((y.samples[t] - s.samples[t]).abs() < 0.02);
        }
    }

    #[test]
    fn bandpass_rejects_slow_drift() {
        let s = sine(0.2, 30.0, 300);
        let y = bandpass(&s, 0.7, 3.5).unwrap();
        assert!(rms(&y.samples) < 0.05 * rms(&s.samples));
    }

    #[test]
    fn bandpass_zero_and_mean() {
        let z = Signal::new(vec![0.0; 64], 30.0).unwrap();
        assert!(bandpass(&z, 0.7, 3.5).unwrap().samples.iter().all(|&v| v == 0.0));
        let s = Signal::new((0..100).map(|t| 3.0 + (t as f64 * 0.3).sin()).collect(), 30.0).unwrap();
        let y = bandpass(&s, 0.7, 3.5).unwrap();
        assert!((y.samples.iter().sum::<f64>() / 100.0).abs() < 1e-9);
    }

    #[test]
    fn bandpass_errors() {
        let s = sine(1.0, 30.0, 64);
        assert!(bandpass(&s, 3.5, 0.7).is_err());
        assert!(bandpass(&s, 0.7, 15.0).is_err());
        assert!(bandpass(&s, 0.0, 3.5).is_err());
        let short = Signal::new(vec![0.0; 7], 30.0).unwrap();
        assert!(bandpass(&short, 0.7, 3.5).is_err());
        let bad = Signal { fs: 30.0, samples: vec![f64::INFINITY; 16] };
        assert!(matches!(bandpass(&bad, 0.7, 3.5), Err(DohaError::Data(_))));
    }

    #[test]
    fn peaks_examples() {
        let x = [0.0, 1.0, 0.0, 1.0, 0.0];
        assert_eq!(find_peaks(&x, 1), vec![1, 3]);
        assert_eq!(find_peaks(&x, 3), vec![1]);
        let ramp: Vec<f64> = (0..10).map(|v| v as f64).collect();
        assert!(find_peaks(&ramp, 1).is_empty());
        // larger amplitude wins over an earlier neighbour
        assert_eq!(find_peaks(&[0.0, 1.0, 0.0, 2.0, 0.0], 3), vec![3]);
    }

    #[test]
    fn synth_examples() {
        let spec = SynthSpec::clean(72.0, 30.0, 300);
        let s = synth_ppg(&spec).unwrap();
        assert_eq!(s.len(), 300);
        for t in 0..275 {
            assert!((s.samples[t] - s.samples[t + 25]).abs() < 1e-9);
        }
        let d = synth_ppg(&SynthSpec { delay_samples: 7, ..spec.clone() }).unwrap();
        for t in 0..300 {
            assert_eq!(d.samples[(t + 7) % 300], s.samples[t]);
        }
        let noisy = SynthSpec { noise_sigma: 0.3, seed: 9, ..spec };
        assert_eq!(synth_ppg(&noisy).unwrap(), synth_ppg(&noisy).unwrap());
    }

    #[test]
    fn synth_validation() {
        assert!(synth_ppg(&SynthSpec::clean(300.0, 30.0, 100)).is_err());
        assert!(synth_ppg(&SynthSpec::clean(200.0, 10.0, 100)).is_err());
        assert!(synth_ppg(&SynthSpec::clean(72.0, 30.0, 0)).is_err());
    }

    #[test]
    fn oracle_examples() {
        let hr = fft_hr_oracle(&sine(1.2, 30.0, 300)).unwrap();
        assert!((hr - 72.0).abs() < 0.5, "{hr}");
        let hr = fft_hr_oracle(&sine(2.5, 30.0, 300)).unwrap();
        assert!((hr - 150.0).abs() < 0.5, "{hr}");
        let dc = Signal::new(vec![5.0; 300], 30.0).unwrap();
        assert!(matches!(fft_hr_oracle(&dc), Err(DohaError::Data(_))));
        assert!(fft_hr_oracle(&sine(1.2, 30.0, 63)).is_err());
    }

    #[test]
    fn resample_examples() {
        let s = sine(1.0, 30.0, 90);
        assert_eq!(resample_linear(&s, 30.0).unwrap(), s);
        let two = Signal::new(vec![0.0, 2.0], 1.0).unwrap();
        assert_eq!(resample_linear(&two, 2.0).unwrap().samples, vec![0.0, 1.0, 2.0]);
        let ramp = Signal::new((0..250).map(|t| 0.5 + 0.1 * t as f64).collect(), 25.0).unwrap();
        let r = resample_linear(&ramp, 30.0).unwrap();
        for (k, v) in r.samples.iter().enumerate() {
            let t = k as f64 / 30.0;
            assert!((v - (0.5 + 0.1 * 25.0 * t)).abs() < 1e-9);
        }
        assert!(resample_linear(&two, 0.5).is_err());
        assert!(resample_linear(&two, -1.0).is_err());
    }
}
