//! Randomized checks of the library's invariants.

mod common;

use common::*;
use doha::harmonizer::{
    ggh_sift, harmonize_step, igh_project, project_against, GradientBatch, HarmonizerConfig, NormQueue,
};
use doha::signal::{bandpass, detect_peaks, fft_hr_oracle, synth_ppg, Signal, SynthSpec};
use doha::ssp::{
    autocorr_seq, build_ssp, invert_hr, phase_invariance_report, ssp_mse_grad, ssp_mse_loss, DelayMode, SspMap,
};
use doha::toy::scenario::Scenario;
use doha::toy::{cosine_lr, make_corpus, train, ClipGeometry, CorpusItem, DomainSpec, ToyModel, TrainConfig};
use doha::harmonizer::Mode;
use proptest::prelude::*;

const FS: f64 = 30.0;
const HRS: [f64; 6] = [48.0, 72.0, 96.0, 120.0, 150.0, 180.0];

fn cases(n: u32) -> ProptestConfig {
    ProptestConfig { failure_persistence: None, ..ProptestConfig::with_cases(n) }
}

fn samples(len: std::ops::Range<usize>) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-5.0f64..5.0, len)
}

fn vectors(n: std::ops::Range<usize>, d: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
    prop::collection::vec(prop::collection::vec(-3.0f64..3.0, d), n)
}

fn rms(a: &[f64]) -> f64 {
    (a.iter().map(|v| v * v).sum::<f64>() / a.len() as f64).sqrt()
}

fn symmetric_map(n: usize, vals: &[f64]) -> SspMap {
    let mut v = vec![0.0; n * n];
    let mut k = 0;
    for i in 0..n {
        for j in i..n {
            let x = if i == j { 1.0 } else { vals[k % vals.len()] };
            k += 1;
            v[i * n + j] = x;
            v[j * n + i] = x;
        }
    }
    SspMap::from_values(n, v, 2, FS).unwrap()
}

proptest! {
    #![proptest_config(cases(1000))]

    #[test]
    fn peaks_respect_min_distance(x in samples(1..300), d in 1usize..25) {
        let sig = Signal::new(x, FS).unwrap();
        let p = detect_peaks(&sig, d);
        for w in p.windows(2) {
            prop_assert!(w[1] - w[0] >= d, "{:?} closer than {d}", w);
        }
    }
}

proptest! {
    #![proptest_config(cases(256))]

    #[test]
    fn bandpass_is_idempotent(x in samples(16..400)) {
        let sig = Signal::new(x, FS).unwrap();
        let once = bandpass(&sig, 0.7, 3.5).unwrap();
        let twice = bandpass(&once, 0.7, 3.5).unwrap();
        let diff: Vec<f64> = once.samples.iter().zip(&twice.samples).map(|(a, b)| a - b).collect();
        prop_assert!(rms(&diff) < 1e-6);
    }

    #[test]
    fn bandpass_is_linear(pair in (16usize..400).prop_flat_map(|n| (samples(n..n + 1), samples(n..n + 1)))) {
        let (a, b) = pair;
        let sum: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x + y).collect();
        let f = |v: Vec<f64>| bandpass(&Signal::new(v, FS).unwrap(), 0.7, 3.5).unwrap().samples;
        let (fa, fb, fs) = (f(a), f(b), f(sum));
        for k in 0..fs.len() {
            prop_assert!((fs[k] - fa[k] - fb[k]).abs() < 1e-9);
        }
    }

    #[test]
    fn noiseless_synth_is_periodic(period in 9usize..=42, cycles in 3usize..12, extra in 0usize..42,
                                   harm in prop::collection::vec(-1.0f64..1.0, 0..3), delay in 0usize..50) {
        // a circular delay only preserves periodicity on a whole number of cycles
        let frames = period * cycles + if delay == 0 { extra } else { 0 };
        let spec = SynthSpec {
            harmonic_amps: harm,
            delay_samples: delay,
            ..SynthSpec::clean(60.0 * FS / period as f64, FS, frames)
        };
        let s = synth_ppg(&spec).unwrap().samples;
        for t in 0..frames - period {
            prop_assert!((s[t + period] - s[t]).abs() < 1e-9, "t={t}: {} vs {}", s[t], s[t + period]);
        }
    }

    #[test]
    fn oracle_recovers_synthetic_rate(k in 0usize..6, noise in 0.0f64..=0.1, seed in any::<u64>(), delay in 0usize..30) {
        let spec = SynthSpec { noise_sigma: noise, seed, delay_samples: delay, ..SynthSpec::clean(HRS[k], FS, 300) };
        let est = fft_hr_oracle(&synth_ppg(&spec).unwrap()).unwrap();
        prop_assert!((est - HRS[k]).abs() <= 1.0, "hr {} estimated {est}", HRS[k]);
    }

    #[test]
    fn ssp_structure(x in samples(20..160), l_win in 2usize..20) {
        let sig = Signal::new(x, FS).unwrap();
        let map = build_ssp(&sig, l_win).unwrap();
        prop_assert_eq!(map.size(), sig.len() - l_win + 1);
        prop_assert_eq!(map_invariant_violation(&map), None);
    }

    #[test]
    fn periodic_seq_peaks_at_period(period in 9usize..=42, h2 in 0.0f64..0.6) {
        let spec = SynthSpec { harmonic_amps: vec![h2], ..SynthSpec::clean(60.0 * FS / period as f64, FS, 200) };
        let map = build_ssp(&synth_ppg(&spec).unwrap(), 17).unwrap();
        let seq = autocorr_seq(&map).values;
        prop_assert!(period + 1 < seq.len());
        prop_assert!(seq[period] >= 0.999, "Seq[{period}] = {}", seq[period]);
        prop_assert!(seq[period] >= seq[period - 1] && seq[period] >= seq[period + 1]);
    }
}

#[test]
fn inversion_matches_oracle_on_clean_maps() {
    for hr in [48.0, 72.0, 96.0, 120.0, 150.0] {
        let sig = synth_ppg(&SynthSpec::clean(hr, FS, 300)).unwrap();
        let got = invert_hr(&build_ssp(&sig, 17).unwrap()).unwrap();
        let oracle = fft_hr_oracle(&sig).unwrap();
        assert!((got - oracle).abs() <= 1.5, "hr {hr}: inverted {got}, oracle {oracle}");
    }
}

proptest! {
    #![proptest_config(cases(100))]

    #[test]
    fn mse_grad_matches_finite_differences(n in 2usize..9, a in samples(64..65), b in samples(64..65)) {
        let pred = symmetric_map(n, &a);
        let label = symmetric_map(n, &b);
        let g = ssp_mse_grad(&pred, &label).unwrap();
        let gap = max_rel_gap(&g, pred.values(), 1e-4, 1e-12, |v| {
            ssp_mse_loss(&SspMap::from_values(n, v.to_vec(), 2, FS).unwrap(), &label).unwrap()
        });
        prop_assert!(gap < 1e-6, "relative gap {gap}");
    }

    #[test]
    fn loss_is_transpose_invariant(n in 2usize..9, a in samples(81..82), b in samples(81..82)) {
        let t = |v: &[f64]| {
            let mut out = vec![0.0; n * n];
            for i in 0..n { for j in 0..n { out[j * n + i] = v[i * n + j]; } }
            SspMap::from_values(n, out, 2, FS).unwrap()
        };
        let p = SspMap::from_values(n, a[..n * n].to_vec(), 2, FS).unwrap();
        let l = SspMap::from_values(n, b[..n * n].to_vec(), 2, FS).unwrap();
        let lhs = ssp_mse_loss(&p, &l).unwrap();
        let rhs = ssp_mse_loss(&t(p.values()), &t(l.values())).unwrap();
        prop_assert!((lhs - rhs).abs() <= 1e-12 * lhs.max(1.0));
    }

    #[test]
    fn truncation_delay_is_quasi_invariant(hr in 42.0f64..=180.0, delay in 1usize..=25, h2 in 0.0f64..0.5) {
        let spec = SynthSpec { harmonic_amps: vec![h2], ..SynthSpec::clean(hr, FS, 300) };
        prop_assume!((delay as f64) < 2.0 * spec.period_samples());
        let dev = phase_invariance_report(&spec, &[delay], 17, DelayMode::Truncation).unwrap()[0].max_interior_dev;
        prop_assert!(dev < 0.05, "hr {hr:.2}, delay {delay}: interior deviation {dev:.4}");
    }
}

proptest! {
    #![proptest_config(cases(256))]

    #[test]
    fn single_projection_is_orthogonal_and_shrinks(a in prop::collection::vec(-3.0f64..3.0, 1..12), seed in any::<u64>()) {
        let b: Vec<f64> = {
            use rand::Rng;
            let mut r = doha::rng::seeded(seed);
            a.iter().map(|x| -x + r.random_range(-0.5..0.5)).collect()
        };
        prop_assume!(dot(&a, &b) < 0.0);
        let batch = GradientBatch::from_grads(vec![a.clone(), b.clone()]).unwrap();
        let p = project_against(&batch, &[vec![0.0; a.len()], b.clone()], seed).unwrap();
        let out = &p.batch.grads[0];
        prop_assert!(dot(out, &b).abs() <= 1e-9 * norm(&a) * norm(&b));
        prop_assert!(norm(out) <= norm(&a) * (1.0 + 1e-12));
    }

    #[test]
    fn projection_steps_never_grow_norms(g in vectors(2..8, 5), seed in any::<u64>()) {
        let batch = GradientBatch::from_grads(g.clone()).unwrap();
        let out = igh_project(&batch, seed).unwrap();
        for (o, i) in out.grads.iter().zip(&g) {
            prop_assert!(norm(o) <= norm(i) * (1.0 + 1e-12));
        }
    }

    #[test]
    fn projected_vectors_stay_in_span(g in vectors(2..6, 8), seed in any::<u64>()) {
        let out = igh_project(&GradientBatch::from_grads(g.clone()).unwrap(), seed).unwrap();
        for o in &out.grads {
            prop_assert!(span_residual(&g, o) < 1e-6);
        }
    }

    #[test]
    fn non_conflicting_batches_pass_through(g in prop::collection::vec(prop::collection::vec(0.0f64..3.0, 6), 2..8), seed in any::<u64>()) {
        let batch = GradientBatch::from_grads(g).unwrap();
        prop_assert_eq!(igh_project(&batch, seed).unwrap(), batch);
    }

    #[test]
    fn sifting_is_idempotent(g in vectors(1..10, 4), hist in prop::collection::vec(0.0f64..6.0, 0..200)) {
        let cfg = HarmonizerConfig::default();
        let queue = NormQueue::with_norms(cfg.queue_len, cfg.warmup, hist);
        let once = ggh_sift(&GradientBatch::from_grads(g).unwrap(), &queue, &cfg).unwrap();
        let twice = ggh_sift(&once.batch, &queue, &cfg).unwrap();
        prop_assert_eq!(&twice.batch, &once.batch);
    }

    #[test]
    fn harmonize_step_is_deterministic(g in vectors(1..10, 4), hist in prop::collection::vec(0.0f64..6.0, 0..200),
                                       seed in any::<u64>(), step in any::<u64>()) {
        let cfg = HarmonizerConfig { seed, ..HarmonizerConfig::default() };
        let batch = GradientBatch::from_grads(g).unwrap();
        let run = || {
            let mut q = NormQueue::with_norms(cfg.queue_len, cfg.warmup, hist.clone());
            let out = harmonize_step(&batch, &mut q, &cfg, step).unwrap();
            (out.update.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), q.iter().collect::<Vec<_>>())
        };
        prop_assert_eq!(run(), run());
    }

    #[test]
    fn cosine_schedule_is_monotone(total in 1usize..5000) {
        let lr: Vec<f64> = (0..total).map(|s| cosine_lr(s, total, 5e-4, 1e-6)).collect();
        prop_assert_eq!(lr[0], 5e-4);
        if total > 1 {
            prop_assert!((lr[total - 1] - 1e-6).abs() < 1e-18);
        }
        prop_assert!(lr.windows(2).all(|w| w[1] <= w[0]));
    }
}

#[test]
fn backward_matches_finite_differences() {
    for seed in 0..50 {
        let gap = tiny_backward_gap(seed);
        assert!(gap < 1e-4, "instance {seed}: relative gap {gap}");
    }
}

proptest! {
    #![proptest_config(cases(64))]

    #[test]
    fn forward_maps_are_valid(seed in any::<u64>(), frames in 20usize..80, scale in 0.0f64..2.0) {
        use rand::Rng;
        let mut r = doha::rng::seeded(seed);
        let model = ToyModel::init(3, 8, 5, 0.0, scale, 0.3, seed).unwrap();
        let clip = doha::toy::Clip::new(3, frames, (0..3 * frames).map(|_| r.random_range(-2.0..2.0)).collect()).unwrap();
        let map = model.forward(&clip, FS).unwrap();
        prop_assert_eq!(map.size(), frames - 8 + 1);
        prop_assert_eq!(map_invariant_violation(&map), None);
    }
}

fn small_corpus(seed: u64) -> Vec<CorpusItem> {
    let mut sc = Scenario::reference();
    sc.train_per_domain = 6;
    make_corpus(&sc.domains, sc.train_per_domain, sc.train_geometry(), seed).unwrap().items
}

#[test]
fn full_doha_training_is_bitwise_reproducible() {
    let items = small_corpus(3);
    let refs: Vec<&CorpusItem> = items.iter().collect();
    let cfg = TrainConfig { epochs: 3, mode: Mode::FullDoha, seed: 11, ..Scenario::reference().train };
    let a = train(&cfg, &refs, &[]).unwrap();
    let b = train(&cfg, &refs, &[]).unwrap();
    let bits = |m: &ToyModel| m.params().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&a.model), bits(&b.model));
    let losses = |o: &doha::toy::TrainOutcome| o.metrics.iter().map(|m| m.train_loss.to_bits()).collect::<Vec<_>>();
    assert_eq!(losses(&a), losses(&b));
}

#[test]
fn first_epoch_lowers_reference_loss() {
    let sc = Scenario::reference();
    let (tc, _) = sc.corpora(0).unwrap();
    let refs: Vec<&CorpusItem> = tc.items.iter().collect();
    let cfg = TrainConfig { epochs: 1, mode: Mode::PlainMean, ..sc.train.clone() };
    let out = train(&cfg, &refs, &[]).unwrap();
    let after = doha::toy::train::mean_loss(&out.model, &refs).unwrap();
    assert!(after < out.init_loss, "loss {} -> {after}", out.init_loss);
}

/// Mean interior-trimmed loss of the model that sees the clean pulse.
fn truth_model_loss(delay_max: usize, seed: u64) -> f64 {
    let ref_domain = &Scenario::reference().domains[0];
    let domain = DomainSpec {
        name: "clean".into(),
        delay_range: [0, delay_max],
        noise_sigma: 0.0,
        channel_mix: vec![1.0],
        distractor_amp: 0.0,
        distractor_mix: vec![0.0],
        burst_prob: 0.0,
        burst_mix: vec![0.0],
        label_fault_prob: 0.0,
        ..ref_domain.clone()
    };
    let other = DomainSpec { name: "clean2".into(), hr_range: [60.0, 140.0], ..domain.clone() };
    let geom = ClipGeometry { frames: 300, fs: FS, l_win: 17 };
    let corpus = make_corpus(&[domain, other], 20, geom, seed).unwrap();
    let model = ToyModel::identity(vec![1.0], 17);
    let trim = 17;
    let mut total = 0.0;
    for it in &corpus.items {
        let pred = model.forward(&it.clip, FS).unwrap();
        let n = pred.size();
        let (mut s, mut k) = (0.0, 0usize);
        for i in trim..n - trim {
            for j in trim..n - trim {
                let d = pred.get(i, j) - it.label.get(i, j);
                s += d * d;
                k += 1;
            }
        }
        total += s / k as f64;
    }
    total / corpus.items.len() as f64
}

#[test]
fn truth_model_loss_ignores_label_delay() {
    for seed in 0..3 {
        let base = truth_model_loss(0, seed);
        let delayed = truth_model_loss(12, seed);
        assert!((delayed - base).abs() < 0.05, "seed {seed}: loss {base:.4} without delay, {delayed:.4} with");
    }
}
