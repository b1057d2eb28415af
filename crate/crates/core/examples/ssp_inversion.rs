//! Build a self-similarity map, read its lag profile and heart rate, and check
//! the loss gradient against a finite difference.

use doha::signal::{synth_ppg, SynthSpec};
use doha::ssp::{autocorr_seq, build_ssp, invert_hr, ssp_mse_grad, ssp_mse_loss, SspMap};

fn main() -> doha::Result<()> {
    let signal = synth_ppg(&SynthSpec { harmonic_amps: vec![0.3], ..SynthSpec::clean(90.0, 30.0, 75) })?;
    let map = build_ssp(&signal, 17)?;
    println!("{} samples -> {}x{} map", signal.len(), map.size(), map.size());

    let seq = autocorr_seq(&map);
    let period = 60.0 * 30.0 / 90.0;
    println!("Seq[0] = {:.3}, Seq[{}] = {:.3} (one period), Seq[{}] = {:.3} (half)",
        seq.values[0], period as usize, seq.values[period as usize],
        (period / 2.0) as usize, seq.values[(period / 2.0) as usize]);
    println!("inverted heart rate: {:.2} bpm", invert_hr(&map)?);

    // Compare a damped copy against the map; the analytic gradient matches a
    // central difference on one entry.
    let damped: Vec<f64> = map.values().iter().map(|v| 0.8 * v).collect();
    let pred = SspMap::from_values(map.size(), damped, map.l_win, map.fs)?;
    let grad = ssp_mse_grad(&pred, &map)?;
    let (i, h) = (5 * map.size() + 9, 1e-6);
    let bump = |d: f64| {
        let mut v = pred.values().to_vec();
        v[i] += d;
        ssp_mse_loss(&SspMap::from_values(map.size(), v, map.l_win, map.fs).unwrap(), &map).unwrap()
    };
    println!("loss {:.5}; dL/dR[5,9] analytic {:.3e}, numeric {:.3e}",
        ssp_mse_loss(&pred, &map)?, grad[i], (bump(h) - bump(-h)) / (2.0 * h));
    Ok(())
}
