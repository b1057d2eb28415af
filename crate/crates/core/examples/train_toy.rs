//! Train the toy model on two reference domains and score the third, once per
//! harmonizer mode. Writes metrics CSVs and a comparison chart into the
//! directory given as the first argument (default: the system temp dir).

use std::path::PathBuf;

use doha::harmonizer::Mode;
use doha::io::{write_metrics_csv, write_text, MetricsRow};
use doha::report::{line_chart_svg, metrics_series, Column};
use doha::toy::scenario::Scenario;

fn main() -> doha::Result<()> {
    let out: PathBuf = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(std::env::temp_dir);
    let scenario = Scenario::reference();
    let (train, eval) = scenario.corpora(0)?;
    let held = scenario.domains.len() - 1;
    println!("held-out domain: {}", scenario.domains[held].name);

    let mut series = Vec::new();
    for mode in Mode::ALL {
        let run = scenario.run_fold(&train, &eval, held, mode, 0)?;
        let last = run.metrics.last().unwrap();
        println!(
            "{mode:>10}: loss {:.4} -> {:.4}, held-out MAE {:.3} -> {:.3} bpm, sifted {}",
            run.init_loss,
            last.train_loss,
            run.init_holdout.map_or(f64::NAN, |h| h.mae),
            run.final_holdout_mae().unwrap_or(f64::NAN),
            run.metrics.iter().map(|m| m.sifted).sum::<usize>(),
        );
        write_metrics_csv(&out.join(format!("metrics_{mode}.csv")), &run.metrics)?;
        let rows: Vec<MetricsRow> = run.metrics.iter().map(MetricsRow::from).collect();
        series.push(metrics_series(mode.name(), &rows, Column::HoldoutMae));
    }
    write_text(&out.join("holdout_mae.svg"), &line_chart_svg("held-out MAE", "epoch", "bpm", &series)?)?;
    println!("wrote metrics and holdout_mae.svg to {}", out.display());
    Ok(())
}
