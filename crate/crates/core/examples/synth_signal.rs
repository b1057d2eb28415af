//! Synthesize a noisy pulse, band-pass it and compare three heart-rate readings:
//! the periodogram oracle, peak spacing, and the self-similarity map.
//!
//!     cargo run --example synth_signal -- 84

use doha::signal::{bandpass, detect_peaks, fft_hr_oracle, resample_linear, synth_ppg, SynthSpec};
use doha::ssp::{build_ssp, invert_hr};

fn main() -> doha::Result<()> {
    let hr: f64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(72.0);
    let spec = SynthSpec {
        harmonic_amps: vec![0.4, 0.15],
        noise_sigma: 0.2,
        trend_slope: 0.002,
        seed: 7,
        ..SynthSpec::clean(hr, 30.0, 300)
    };
    let raw = synth_ppg(&spec)?;
    let clean = bandpass(&raw, 0.7, 3.5)?;

    let peaks = detect_peaks(&clean, (30.0f64 / 3.5).ceil() as usize);
    let mean_gap = (peaks[peaks.len() - 1] - peaks[0]) as f64 / (peaks.len() - 1) as f64;
    println!("true            {hr:7.2} bpm");
    println!("periodogram     {:7.2} bpm", fft_hr_oracle(&clean)?);
    // Plain peak picking also catches the second-harmonic bumps.
    println!("peak spacing    {:7.2} bpm ({} peaks)", 60.0 * clean.fs / mean_gap, peaks.len());
    println!("SSP inversion   {:7.2} bpm", invert_hr(&build_ssp(&clean, 17)?)?);

    let up = resample_linear(&clean, 60.0)?;
    println!("resampled to 60 Hz: {} -> {} samples, oracle {:.2} bpm", clean.len(), up.len(), fft_hr_oracle(&up)?);
    Ok(())
}
