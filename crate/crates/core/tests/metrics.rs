mod common;

use common::*;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use stamp_core::metrics::{
    aggregate_seeds, auc_pr, auroc, balanced_accuracy, cohens_kappa, confusion_matrix,
    kappa_from_confusion, predict_labels, weighted_f1, EvalReport, TaskKind,
};
use stamp_core::StampError;

fn near(a: f64, b: f64, tol: f64) {
    assert!((a - b).abs() <= tol, "{a} vs {b}");
}

#[test]
fn balanced_accuracy_examples() {
    assert_eq!(
        balanced_accuracy(&[0, 1, 2, 1], &[0, 1, 2, 1]).unwrap(),
        1.0
    );
    assert_eq!(
        balanced_accuracy(&[0, 0, 1, 1], &[0, 0, 0, 0]).unwrap(),
        0.5
    );
    near(
        balanced_accuracy(&[0, 0, 1, 1, 1], &[0, 1, 1, 1, 0]).unwrap(),
        0.5833333333333333,
        1e-12,
    );
    assert!(matches!(
        balanced_accuracy(&[], &[]),
        Err(StampError::Data(_))
    ));
}

#[test]
fn auroc_examples() {
    assert_eq!(auroc(&[0, 1, 0, 1], &[0.1, 0.7, 0.3, 0.9]).unwrap(), 1.0);
    assert_eq!(auroc(&[0, 1, 0, 1], &[0.9, 0.3, 0.7, 0.1]).unwrap(), 0.0);
    let (y, s) = ([0, 0, 1, 1], [0.1, 0.4, 0.35, 0.8]);
    near(auroc_pairs(&y, &s), 0.75, 0.0);
    near(auroc(&y, &s).unwrap(), 0.75, 1e-15);
    assert!(matches!(
        auroc(&[0, 0], &[0.1, 0.2]),
        Err(StampError::UndefinedMetric(_))
    ));
    assert!(matches!(auroc(&[0, 1], &[0.1]), Err(StampError::Data(_))));
}

#[test]
fn auc_pr_examples() {
    assert_eq!(auc_pr(&[0, 1, 1, 0], &[0.2, 0.9, 0.8, 0.1]).unwrap(), 1.0);
    let (y, s) = ([1, 0, 1], [0.9, 0.8, 0.7]);
    near(
        average_precision_thresholds(&y, &s),
        0.8333333333333333,
        1e-15,
    );
    near(auc_pr(&y, &s).unwrap(), 0.8333333333333333, 1e-15);
    assert!(matches!(
        auc_pr(&[1, 1], &[0.1, 0.2]),
        Err(StampError::UndefinedMetric(_))
    ));
}

#[test]
fn auc_pr_of_random_scores_tracks_prevalence() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (n, pi) = (20_000, 0.3);
    let y: Vec<usize> = (0..n).map(|_| usize::from(rng.random_bool(pi))).collect();
    let s: Vec<f64> = (0..n).map(|_| rng.random()).collect();
    let sigma = (pi * (1.0 - pi) / n as f64).sqrt();
    let prevalence = y.iter().sum::<usize>() as f64 / n as f64;
    // Average precision of uninformative scores fluctuates a little more
    // than the prevalence estimate; allow 3σ on top of the sample prevalence.
    assert!((auc_pr(&y, &s).unwrap() - prevalence).abs() < 3.0 * sigma + 0.01);
}

#[test]
fn kappa_examples() {
    assert_eq!(cohens_kappa(&[2, 0, 1, 1], &[2, 0, 1, 1]).unwrap(), 1.0);
    near(kappa_from_confusion(&[vec![3, 1], vec![1, 3]]), 0.5, 1e-15);
    assert_eq!(cohens_kappa(&[0, 0, 0], &[0, 0, 0]).unwrap(), 0.0);
}

#[test]
fn kappa_of_independent_predictions_is_near_zero() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let y: Vec<usize> = (0..20_000).map(|_| rng.random_range(0..4)).collect();
    let p: Vec<usize> = (0..20_000).map(|_| rng.random_range(0..4)).collect();
    assert!(cohens_kappa(&y, &p).unwrap().abs() < 0.02);
}

#[test]
fn weighted_f1_examples() {
    assert_eq!(weighted_f1(&[0, 1, 2, 2], &[0, 1, 2, 2]).unwrap(), 1.0);
    assert_eq!(weighted_f1(&[0, 0, 0], &[0, 0, 0]).unwrap(), 1.0);
    // Per-class F1 is 2/3, 2/3 and 1 with supports 2, 1 and 1.
    let (y, p) = ([0, 0, 1, 2], [0, 1, 1, 2]);
    near(weighted_f1_scan(&y, &p), 0.75, 1e-15);
    near(weighted_f1(&y, &p).unwrap(), 0.75, 1e-15);
    assert!(matches!(weighted_f1(&[], &[]), Err(StampError::Data(_))));
}

#[test]
fn aggregate_examples() {
    let report = |v: f64| EvalReport {
        task: TaskKind::Binary,
        n_samples: 10,
        balanced_accuracy: v,
        auroc: Some(v),
        auc_pr: Some(0.5),
        cohens_kappa: None,
        weighted_f1: None,
        confusion: vec![vec![5, 0], vec![0, 5]],
    };
    let agg = aggregate_seeds(&[report(0.6), report(0.8)]).unwrap();
    let auroc = agg.get("auroc").unwrap();
    near(auroc.mean, 0.7, 1e-15);
    near(auroc.std, 0.1414213562373095, 1e-15);
    assert_eq!(agg.get("auc_pr").unwrap().std, 0.0);
    assert_eq!(
        aggregate_seeds(&[report(0.6)])
            .unwrap()
            .get("auroc")
            .unwrap()
            .std,
        0.0
    );
    assert!(agg.get("cohens_kappa").is_none());
    assert!(matches!(aggregate_seeds(&[]), Err(StampError::Usage(_))));
}

#[test]
fn report_from_probabilities() {
    let probs = vec![
        vec![0.5, 0.5],
        vec![0.7, 0.3],
        vec![0.2, 0.8],
        vec![0.6, 0.4],
    ];
    assert_eq!(predict_labels(&probs), vec![1, 0, 1, 0]);
    let r = EvalReport::from_probs(&[0, 0, 1, 1], &probs, 2).unwrap();
    assert_eq!(r.task, TaskKind::Binary);
    assert_eq!(r.confusion, vec![vec![1, 1], vec![1, 1]]);
    near(
        r.auroc.unwrap(),
        auroc_pairs(&[0, 0, 1, 1], &[0.5, 0.3, 0.8, 0.4]),
        1e-15,
    );
    assert!(r.cohens_kappa.is_none() && r.weighted_f1.is_none());
    assert_eq!(r.monitor().0, "auroc");

    let probs = vec![
        vec![0.1, 0.2, 0.7],
        vec![0.4, 0.4, 0.2],
        vec![0.3, 0.6, 0.1],
    ];
    let r = EvalReport::from_probs(&[2, 1, 1], &probs, 3).unwrap();
    assert_eq!(r.task, TaskKind::Multiclass);
    assert!(r.auroc.is_none());
    assert_eq!(r.monitor().0, "cohens_kappa");
    assert!(r.to_text().contains("confusion = 0,0,0;1,1,0;0,0,1"));

    // single-class validation split: monitor falls back
    let r = EvalReport::from_probs(&[1, 1], &[vec![0.2, 0.8], vec![0.6, 0.4]], 2).unwrap();
    assert_eq!(r.auroc, None);
    assert_eq!(r.monitor(), ("balanced_accuracy", 0.5));
}

#[test]
fn oracle_equivalence_on_random_instances() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for (name, dev) in metric_oracle_deviation(&mut rng, 300, 200) {
        assert!(dev <= 1e-9, "{name}: {dev}");
    }
}

proptest! {
    #[test]
    fn auroc_is_invariant_under_monotone_transforms(seed in any::<u64>(), shift in -5.0f64..5.0, scale in 0.1f64..10.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (y, s) = binary_instance(&mut rng, 60);
        let t: Vec<f64> = s.iter().map(|v| (scale * v + shift).exp()).collect();
        prop_assert_eq!(auroc(&y, &s).unwrap(), auroc(&y, &t).unwrap());
    }

    #[test]
    fn balanced_accuracy_ignores_class_names(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (y, p) = multiclass_instance(&mut rng, 80);
        let mut perm: Vec<usize> = (0..6).collect();
        for i in (1..6).rev() {
            perm.swap(i, rng.random_range(0..=i));
        }
        let ry: Vec<usize> = y.iter().map(|&c| perm[c]).collect();
        let rp: Vec<usize> = p.iter().map(|&c| perm[c]).collect();
        let a = balanced_accuracy(&y, &p).unwrap();
        let b = balanced_accuracy(&ry, &rp).unwrap();
        prop_assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn kappa_bounded_by_accuracy(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let k = rng.random_range(2..5);
        let m: Vec<Vec<u64>> = (0..k).map(|_| (0..k).map(|_| rng.random_range(0..12)).collect()).collect();
        let n: u64 = m.iter().flatten().sum();
        prop_assume!(n > 0);
        let (mut yt, mut yp) = (vec![], vec![]);
        for (t, row) in m.iter().enumerate() {
            for (p, &c) in row.iter().enumerate() {
                yt.extend(std::iter::repeat_n(t, c as usize));
                yp.extend(std::iter::repeat_n(p, c as usize));
            }
        }
        let kappa = kappa_from_confusion(&m);
        prop_assert!((kappa - kappa_scan(&yt, &yp)).abs() < 1e-12);
        let accuracy = (0..k).map(|c| m[c][c]).sum::<u64>() as f64 / n as f64;
        prop_assert!(kappa <= accuracy + 1e-12);
        prop_assert!((-1.0..=1.0).contains(&kappa));
    }

    #[test]
    fn report_invariants(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let k = rng.random_range(2..5);
        let n = rng.random_range(1..50);
        let y: Vec<usize> = (0..n).map(|_| rng.random_range(0..k)).collect();
        let probs: Vec<Vec<f64>> = (0..n)
            .map(|_| {
                let raw: Vec<f64> = (0..k).map(|_| rng.random::<f64>()).collect();
                let total: f64 = raw.iter().sum();
                raw.iter().map(|v| v / total).collect()
            })
            .collect();
        let r = EvalReport::from_probs(&y, &probs, k).unwrap();
        for (name, v) in r.values() {
            let lo = if name == "cohens_kappa" { -1.0 } else { 0.0 };
            prop_assert!(v >= lo && v <= 1.0, "{} = {}", name, v);
        }
        let m = confusion_matrix(&y, &predict_labels(&probs), k).unwrap();
        for c in 0..k {
            prop_assert_eq!(r.confusion[c].iter().sum::<u64>() as usize, y.iter().filter(|&&v| v == c).count());
        }
        prop_assert_eq!(m, r.confusion);
    }
}
