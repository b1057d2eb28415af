//! How far a self-similarity map moves when the reference is delayed, for a
//! few heart rates. Writes `delay_sweep.csv` and `delay_sweep.svg` into the
//! directory given as the first argument (default: the system temp dir).

use std::path::PathBuf;

use doha::report::{delay_sweep_series, line_chart_svg, series_csv};
use doha::signal::SynthSpec;
use doha::ssp::{phase_invariance_report, DelayMode};

fn main() -> doha::Result<()> {
    let out: PathBuf = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(std::env::temp_dir);
    let delays: Vec<usize> = (0..=25).collect();
    let mut series = Vec::new();
    for hr in [48.0, 72.0, 96.0, 120.0, 1800.0 / 17.0] {
        let spec = SynthSpec { harmonic_amps: vec![0.3], ..SynthSpec::clean(hr, 30.0, 300) };
        let rows = phase_invariance_report(&spec, &delays, 17, DelayMode::Truncation)?;
        let worst = rows.iter().map(|r| r.max_interior_dev).fold(0.0, f64::max);
        let whole = rows.iter().filter(|r| r.max_interior_dev < 1e-9).map(|r| r.delay).collect::<Vec<_>>();
        println!("{hr:7.2} bpm  max dev {worst:.3}  exact at delays {whole:?}");
        series.push(delay_sweep_series(&format!("{hr:.1} bpm"), &rows));
    }
    doha::io::write_text(&out.join("delay_sweep.csv"), &series_csv(&series, "delay", "max_interior_dev"))?;
    doha::io::write_text(&out.join("delay_sweep.svg"), &line_chart_svg("map deviation under label delay", "delay (samples)", "max |dR|", &series)?)?;
    println!("wrote {}/delay_sweep.{{csv,svg}}", out.display());
    Ok(())
}
