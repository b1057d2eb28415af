//! Write and read back every on-disk format: signals, maps, gradient batches,
//! queue snapshots and a small corpus directory.

use doha::harmonizer::GradientBatch;
use doha::io;
use doha::signal::{synth_ppg, SynthSpec};
use doha::ssp::build_ssp;
use doha::toy::scenario::Scenario;
use doha::toy::{make_corpus, ClipGeometry};

fn main() -> doha::Result<()> {
    let dir = std::env::temp_dir().join("doha_file_formats");
    let signal = synth_ppg(&SynthSpec::clean(66.0, 30.0, 120))?;
    io::write_signal(&dir.join("pulse.json"), &signal)?;
    io::write_signal(&dir.join("pulse.csv"), &signal)?;
    assert_eq!(io::read_signal(&dir.join("pulse.csv"), Some(30.0))?, signal);

    let map = build_ssp(&signal, 17)?;
    io::write_ssp_csv(&dir.join("pulse.ssp.csv"), &map)?;
    assert_eq!(io::read_ssp_csv(&dir.join("pulse.ssp.csv"))?, map);

    let batch = GradientBatch::from_grads(vec![vec![1.0, 0.0, 2.0], vec![-1.0, 1.0, 0.5]])?;
    io::write_grads(&dir.join("grads.bin"), &batch)?;
    io::write_queue_csv(&dir.join("queue.csv"), batch.norms())?;
    assert_eq!(io::read_grads(&dir.join("grads.bin"))?.grads, batch.grads);

    let scenario = Scenario::reference();
    let geom = ClipGeometry { frames: 75, fs: 30.0, l_win: 17 };
    let corpus = make_corpus(&scenario.domains, 2, geom, 1)?;
    io::save_corpus(&dir.join("corpus"), &corpus)?;
    assert_eq!(io::load_corpus(&dir.join("corpus"))?, corpus);
    println!("all formats round-tripped under {}", dir.display());
    Ok(())
}
