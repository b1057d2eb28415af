//! Inter-domain gradient conflict in the reference scenario at initialization,
//! before and after projecting the domain-mean gradients against each other.

use doha::toy::scenario::Scenario;
use doha::toy::{gradient_conflict_report, CorpusItem};

fn main() -> doha::Result<()> {
    let scenario = Scenario::reference();
    let (train, _) = scenario.corpora(0)?;
    let model = scenario.train.init_model(train.channels())?;
    let items: Vec<&CorpusItem> = train.items.iter().collect();
    let report = gradient_conflict_report(&model, &items, 0)?;

    let names: Vec<&str> = report.domains.iter().map(|&d| train.domains[d].name.as_str()).collect();
    for (label, m) in [("before", &report.before), ("after", &report.after)] {
        println!("{label}:");
        for (name, row) in names.iter().zip(m) {
            let cells: Vec<String> = row.iter().map(|c| format!("{c:+.3}")).collect();
            println!("  {name:>8} {}", cells.join(" "));
        }
    }
    println!("negative instance pairs: {:.1}%", 100.0 * report.negative_pair_fraction);
    println!("projections: {}, max |cos| after: {:.2e}", report.projection_steps, report.max_abs_cos_after);
    Ok(())
}
