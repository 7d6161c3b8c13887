use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use stamp_core::data::{
    generate_interaction_dataset, generate_separable_dataset, EmbeddingGrid, InteractionSpec,
    SeparableSpec,
};
use stamp_core::experiment::{run_seeds, Splits};
use stamp_core::model::{Aggregator, Mixer, PeMode, StampConfig, StampParams};
use stamp_core::training::{
    evaluate, fit, initial_loss, AdamW, AdamWConfig, OneCycle, TrainConfig, ABLATION_SEEDS,
    CANONICAL_SEEDS,
};
use stamp_core::{StampError, Tensor};

fn small_model(dims: [usize; 3], n_classes: usize) -> StampConfig {
    let mut c = StampConfig::new(dims[0], dims[1], dims[2], n_classes);
    c.model_dim = 16;
    c.depth = 1;
    c.hidden = 16;
    c.heads = 2;
    c.queries = 2;
    c
}

fn separable(n: usize, noise: f64) -> Splits {
    let (ds, m) = generate_separable_dataset(&SeparableSpec {
        spatial: 4,
        temporal: 2,
        embed_dim: 16,
        n_samples: n,
        noise,
        ..Default::default()
    })
    .unwrap();
    Splits::resolve(&ds, &m).unwrap()
}

fn quick(epochs: usize) -> TrainConfig {
    TrainConfig {
        epochs,
        batch_size: 32,
        initial_lr: 5e-4,
        max_lr: 3e-3,
        ..Default::default()
    }
}

#[test]
fn table_four_defaults() {
    let t = TrainConfig::default();
    assert_eq!((t.epochs, t.batch_size), (50, 64));
    assert_eq!((t.initial_lr, t.max_lr), (5e-5, 3e-4));
    assert_eq!(t.optimizer.eps, 1e-8);
    assert_eq!(t.optimizer.weight_decay, 0.05);
    assert_eq!((t.optimizer.beta1, t.optimizer.beta2), (0.9, 0.999));
    assert_eq!(CANONICAL_SEEDS, [654, 114, 25, 759, 281]);
    assert_eq!(ABLATION_SEEDS[..], CANONICAL_SEEDS[..3]);
}

#[test]
fn schedule_endpoints() {
    let s = TrainConfig::default().schedule(1200);
    assert_eq!(s.total_steps, 50 * 19);
    assert!((s.lr(0) - 5e-5).abs() < 1e-18);
    let peak = (0.3 * 950.0) as usize;
    assert!((s.lr(peak) - 3e-4).abs() < 1e-12);
    let mid = s.lr(600);
    assert!(mid < 3e-4 && mid > s.final_lr());
    assert!((s.lr(950) - 5e-9).abs() < 1e-20);
    let lrs: Vec<f64> = (0..=950).map(|i| s.lr(i)).collect();
    assert!(lrs[..=peak].windows(2).all(|w| w[0] <= w[1]));
    assert!(lrs[peak..].windows(2).all(|w| w[0] >= w[1]));
    assert_eq!(OneCycle::new(10).lr(10_000), OneCycle::new(10).lr(10));
}

fn params() -> StampParams<Tensor<f64>> {
    let c = small_model([2, 2, 3], 2);
    StampParams::init(&c, 3).unwrap()
}

fn random_like(p: &StampParams<Tensor<f64>>, seed: u64) -> StampParams<Tensor<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    p.map(|_, t| {
        Tensor::new(
            t.shape().to_vec(),
            (0..t.len()).map(|_| rng.random_range(-1.0..1.0)).collect(),
        )
        .unwrap()
    })
}

fn norm(p: &StampParams<Tensor<f64>>) -> f64 {
    p.named()
        .iter()
        .flat_map(|(_, t)| t.data().to_vec())
        .map(|v| v * v)
        .sum::<f64>()
        .sqrt()
}

#[test]
fn zero_learning_rate_changes_nothing() {
    let mut p = params();
    let before = p.clone();
    let mut opt = AdamW::new(AdamWConfig::default(), &p);
    for seed in 0..3 {
        opt.step(&mut p, &random_like(&before, seed), 0.0).unwrap();
    }
    assert_eq!(p, before);
    assert_eq!(opt.steps_taken(), 3);
}

#[test]
fn decoupled_decay_is_geometric() {
    let mut p = params();
    let zero = p.map(|_, t| Tensor::zeros(t.shape()));
    let (lr, wd) = (0.1, 0.05);
    let mut opt = AdamW::new(
        AdamWConfig {
            weight_decay: wd,
            ..Default::default()
        },
        &p,
    );
    let n0 = norm(&p);
    for k in 1..=20 {
        opt.step(&mut p, &zero, lr).unwrap();
        let expected = n0 * (1.0 - lr * wd).powi(k);
        assert!((norm(&p) - expected).abs() < 1e-12 * n0, "step {k}");
    }
}

#[test]
fn first_step_moves_each_coordinate_by_lr() {
    let mut p = params();
    let before = p.clone();
    let grads = random_like(&p, 9);
    let mut opt = AdamW::new(
        AdamWConfig {
            weight_decay: 0.0,
            ..Default::default()
        },
        &p,
    );
    let lr = 1e-2;
    opt.step(&mut p, &grads, lr).unwrap();
    // bias-corrected m̂ = g and v̂ = g², so Δ = −lr·g/(|g| + ε)
    for (((_, a), (_, b)), (_, g)) in p.named().iter().zip(before.named()).zip(grads.named()) {
        for ((x, y), gi) in a.data().iter().zip(b.data()).zip(g.data()) {
            let expected = -lr * gi / (gi.abs() + 1e-8);
            assert!((x - y - expected).abs() < 1e-14);
        }
    }
}

#[test]
fn non_finite_gradient_aborts_and_names_table() {
    let mut p = params();
    let before = p.clone();
    let mut grads = random_like(&p, 1);
    grads.out.weight.data_mut()[0] = f64::NAN;
    let mut opt = AdamW::new(AdamWConfig::default(), &p);
    match opt.step(&mut p, &grads, 1e-3) {
        Err(StampError::NonFiniteGradient { table }) => assert_eq!(table, "out.weight"),
        other => panic!("{other:?}"),
    }
    assert_eq!(p, before);
    assert_eq!(opt.steps_taken(), 0);
}

#[test]
fn initial_loss_is_near_log_classes() {
    for (n_classes, seed) in [(2, 1), (4, 2), (7, 3)] {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let samples: Vec<EmbeddingGrid> = (0..64)
            .map(|i| {
                let v = (0..22 * 4 * 64)
                    .map(|_| rng.random_range(-2.0f32..2.0))
                    .collect();
                EmbeddingGrid::new(format!("r{i}"), i % n_classes, [22, 4, 64], v).unwrap()
            })
            .collect();
        let mut c = StampConfig::new(22, 4, 64, n_classes);
        c.depth = 2;
        let loss = initial_loss(&c, &samples, 64, seed).unwrap();
        let target = (n_classes as f64).ln();
        assert!(
            (loss / target - 1.0).abs() < 0.1,
            "n={n_classes}: {loss} vs {target}"
        );
    }
}

#[test]
fn equal_seeds_give_identical_traces() {
    let s = separable(200, 1.0);
    let c = small_model([4, 2, 16], 4);
    let run = |seed| fit(&c, &quick(3), &s.train, &s.validation, seed, |_| {}).unwrap();
    let (a, b) = (run(5), run(5));
    assert_eq!(a.log, b.log);
    assert_eq!(a.best.params, b.best.params);
    let bits = |log: &[stamp_core::training::EpochRecord]| {
        log.iter()
            .map(|r| r.train_loss.to_bits())
            .collect::<Vec<_>>()
    };
    assert_eq!(bits(&a.log), bits(&b.log));
    assert_ne!(bits(&a.log), bits(&run(6).log));
}

#[test]
fn step_count_matches_epochs_times_batches() {
    let s = separable(150, 1.0);
    let c = small_model([4, 2, 16], 4);
    let t = quick(2);
    let state = fit(&c, &t, &s.train, &s.validation, 1, |_| {}).unwrap();
    // 90 training samples in batches of 32, partial batch kept
    assert_eq!(s.train.len(), 90);
    assert_eq!(state.log.last().unwrap().step, 2 * 3);
    assert_eq!(state.epochs_completed, 2);
}

#[test]
fn best_checkpoint_is_the_argmax_epoch() {
    let s = separable(300, 4.0);
    let c = small_model([4, 2, 16], 4);
    let mut seen = vec![];
    let state = fit(&c, &quick(8), &s.train, &s.validation, 7, |r| {
        seen.push(r.val_monitor)
    })
    .unwrap();
    let best = seen.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let first_best = seen.iter().position(|&v| v == best).unwrap();
    assert_eq!(state.best_epoch, first_best);
    assert_eq!(state.best_monitor, best);
    let again = evaluate(&state.best, &s.validation, 64).unwrap();
    assert_eq!(again.monitor().1, best);
}

#[test]
fn separable_data_is_learned_without_mixing() {
    let s = separable(600, 1.0);
    let mut c = small_model([4, 2, 16], 4);
    c.pe_mode = PeMode::All;
    c.mixer = Mixer::None;
    c.aggregator = Aggregator::Mean;
    let t = TrainConfig {
        batch_size: 64,
        ..quick(50)
    };
    let state = fit(&c, &t, &s.train, &s.validation, 654, |_| {}).unwrap();
    let train = evaluate(&state.best, &s.train, 64).unwrap();
    assert!(
        train.balanced_accuracy > 0.95,
        "{}",
        train.balanced_accuracy
    );
}

#[test]
fn shuffled_labels_stay_at_chance() {
    let (ds, m) = generate_interaction_dataset(&InteractionSpec {
        n_samples: 600,
        distractors: false,
        noise: 0.5,
        ..Default::default()
    })
    .unwrap();
    let s = Splits::resolve(&ds, &m).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let shuffle = |v: &[EmbeddingGrid], rng: &mut ChaCha8Rng| -> Vec<EmbeddingGrid> {
        let mut labels: Vec<usize> = v.iter().map(|g| g.label()).collect();
        labels.shuffle(rng);
        v.iter()
            .zip(labels)
            .map(|(g, y)| {
                EmbeddingGrid::new(g.sample_id(), y, g.dims(), g.embeddings().to_vec()).unwrap()
            })
            .collect()
    };
    let train = shuffle(&s.train, &mut rng);
    let val = shuffle(&s.validation, &mut rng);
    let test = shuffle(&s.test, &mut rng);
    let c = small_model([8, 4, 32], 4);
    let state = fit(&c, &quick(10), &train, &val, 3, |_| {}).unwrap();
    let mean_val = state
        .log
        .iter()
        .map(|r| r.val_balanced_accuracy)
        .sum::<f64>()
        / state.log.len() as f64;
    assert!((mean_val - 0.25).abs() <= 0.1, "{mean_val}");
    let acc = evaluate(&state.best, &test, 64).unwrap().balanced_accuracy;
    assert!((acc - 0.25).abs() <= 0.1, "{acc}");
}

#[test]
fn huge_learning_rate_diverges_but_keeps_a_checkpoint() {
    let s = separable(100, 1.0);
    let c = small_model([4, 2, 16], 4);
    let t = TrainConfig {
        initial_lr: 1e30,
        max_lr: 1e36,
        ..quick(5)
    };
    let state = fit(&c, &t, &s.train, &s.validation, 1, |_| {}).unwrap();
    let d = state.diverged.expect("diverged");
    assert!(state.epochs_completed <= d.epoch + 1);
    assert!(state.best.params.named().iter().all(|(_, t)| t.is_finite()));
}

#[test]
fn invalid_inputs_are_rejected() {
    let s = separable(50, 1.0);
    let c = small_model([4, 2, 16], 4);
    assert!(matches!(
        fit(&c, &quick(1), &[], &s.validation, 1, |_| {}),
        Err(StampError::Data(_))
    ));
    let wrong = small_model([4, 2, 8], 4);
    assert!(matches!(
        fit(&wrong, &quick(1), &s.train, &s.validation, 1, |_| {}),
        Err(StampError::Data(_))
    ));
    let t = TrainConfig {
        pct_start: 1.5,
        ..quick(1)
    };
    assert!(matches!(
        fit(&c, &t, &s.train, &s.validation, 1, |_| {}),
        Err(StampError::Config(_))
    ));
}

#[test]
fn seed_summary_reports_each_run() {
    let s = separable(120, 1.0);
    let c = small_model([4, 2, 16], 4);
    let mut finished = vec![];
    let summary = run_seeds(
        &c,
        &quick(2),
        &s,
        &[3, 4],
        |_, _| {},
        |state, _| {
            finished.push(state.seed);
            Ok(())
        },
    )
    .unwrap();
    assert_eq!(finished, vec![3, 4]);
    assert_eq!(summary.runs.len(), 2);
    assert_eq!(summary.aggregate.n_runs, 2);
    let one = run_seeds(&c, &quick(2), &s, &[3], |_, _| {}, |_, _| Ok(())).unwrap();
    assert!(one.aggregate.metrics.iter().all(|m| m.std == 0.0));
    assert_eq!(one.runs[0].test, summary.runs[0].test);
}
