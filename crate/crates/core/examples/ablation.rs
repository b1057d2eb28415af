//! Leave-one-domain-out ablation of the harmonizer stages over five seeds.
//! Takes about a minute in release mode.
//!
//!     cargo run --release --example ablation

use doha::harmonizer::Mode;
use doha::toy::scenario::{summarize, Scenario};

fn main() -> doha::Result<()> {
    let scenario = Scenario::reference();
    let rows = scenario.ablation(&[0, 1, 2, 3, 4], &Mode::ALL)?;
    println!("seed mode        per-fold MAE (bpm)            mean");
    for r in &rows {
        let folds: Vec<String> = r.fold_mae.iter().map(|v| format!("{v:7.3}")).collect();
        println!("{:>4} {:<11} {}  {:7.3}", r.seed, r.mode.name(), folds.join(" "), r.mean_mae);
    }
    for s in summarize(&rows) {
        println!(
            "{:<10} beats plain-mean in {}/{} seeds, median improvement {:.1}%",
            s.mode.name(),
            s.wins,
            s.seeds,
            100.0 * s.median_improvement
        );
    }
    Ok(())
}
