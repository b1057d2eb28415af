//! One harmonization step by hand: projection of conflicting gradients, then
//! sifting once the norm queue has warmed up.

use doha::harmonizer::{harmonize_step, GradientBatch, HarmonizerConfig, NormQueue};

fn main() -> doha::Result<()> {
    let cfg = HarmonizerConfig::default();

    // Two conflicting gradients, cold queue: only projection acts.
    let batch = GradientBatch::from_grads(vec![vec![1.0, 0.0], vec![-1.0, 1.0]])?;
    let mut queue = cfg.new_queue();
    let out = harmonize_step(&batch, &mut queue, &cfg, 0)?;
    println!("conflicting pair -> update {:?}, {} projections", out.update, out.events.len());
    for e in &out.events {
        println!("  g{} against g{}: cos {:+.3} -> {:+.3}", e.i, e.j, e.cos_before, e.cos_after);
    }

    // A warm queue with norms 0.05..2.0: the outlier is zeroed before averaging.
    let history = (1..=40).map(|k| k as f64 / 20.0);
    let mut queue = NormQueue::with_norms(cfg.queue_len, cfg.warmup, history);
    let batch = GradientBatch::from_grads(vec![vec![0.6, 0.8], vec![0.8, 0.6], vec![10.0, -0.5]])?;
    let out = harmonize_step(&batch, &mut queue, &cfg, 1)?;
    println!("threshold {:?}, kept {:?}, update {:?}", out.threshold, out.kept, out.update);
    println!("queue now holds {} norms", queue.len());
    Ok(())
}
