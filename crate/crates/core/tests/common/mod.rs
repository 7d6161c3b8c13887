//! Brute-force metric oracles and random instance generators shared by the
//! integration targets.

#![allow(dead_code)]

use rand::Rng;

/// Fraction of (positive, negative) pairs ordered correctly, ties ½.
pub fn auroc_pairs(y: &[usize], s: &[f64]) -> f64 {
    let (mut wins, mut pairs) = (0.0, 0.0);
    for i in 0..y.len() {
        for j in 0..y.len() {
            if y[i] == 1 && y[j] == 0 {
                pairs += 1.0;
                if s[i] > s[j] {
                    wins += 1.0;
                } else if s[i] == s[j] {
                    wins += 0.5;
                }
            }
        }
    }
    wins / pairs
}

/// Average precision by rescanning the whole input at every distinct threshold.
pub fn average_precision_thresholds(y: &[usize], s: &[f64]) -> f64 {
    let mut thresholds = s.to_vec();
    thresholds.sort_by(|a, b| b.total_cmp(a));
    thresholds.dedup();
    let positives = y.iter().filter(|&&v| v == 1).count() as f64;
    let mut prev_recall = 0.0;
    let mut ap = 0.0;
    for tau in thresholds {
        let (mut tp, mut selected) = (0.0, 0.0);
        for (yi, si) in y.iter().zip(s) {
            if *si >= tau {
                selected += 1.0;
                if *yi == 1 {
                    tp += 1.0;
                }
            }
        }
        let recall = tp / positives;
        ap += (recall - prev_recall) * (tp / selected);
        prev_recall = recall;
    }
    ap
}

fn classes(y: &[usize], p: &[usize]) -> usize {
    y.iter().chain(p).max().unwrap() + 1
}

pub fn balanced_accuracy_scan(y: &[usize], p: &[usize]) -> f64 {
    let mut recalls = vec![];
    for c in 0..classes(y, p) {
        let support = y.iter().filter(|&&v| v == c).count();
        if support > 0 {
            let hit = y.iter().zip(p).filter(|(&a, &b)| a == c && b == c).count();
            recalls.push(hit as f64 / support as f64);
        }
    }
    recalls.iter().sum::<f64>() / recalls.len() as f64
}

pub fn kappa_scan(y: &[usize], p: &[usize]) -> f64 {
    let n = y.len() as f64;
    let agree = y.iter().zip(p).filter(|(a, b)| a == b).count() as f64 / n;
    let mut chance = 0.0;
    for c in 0..classes(y, p) {
        let a = y.iter().filter(|&&v| v == c).count() as f64 / n;
        let b = p.iter().filter(|&&v| v == c).count() as f64 / n;
        chance += a * b;
    }
    if chance == 1.0 {
        return 0.0;
    }
    (agree - chance) / (1.0 - chance)
}

pub fn weighted_f1_scan(y: &[usize], p: &[usize]) -> f64 {
    let mut total = 0.0;
    for c in 0..classes(y, p) {
        let tp = y.iter().zip(p).filter(|(&a, &b)| a == c && b == c).count() as f64;
        let fp = y.iter().zip(p).filter(|(&a, &b)| a != c && b == c).count() as f64;
        let fn_ = y.iter().zip(p).filter(|(&a, &b)| a == c && b != c).count() as f64;
        let support = tp + fn_;
        let precision = if tp + fp > 0.0 { tp / (tp + fp) } else { 0.0 };
        let recall = if support > 0.0 { tp / support } else { 0.0 };
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        total += f1 * support;
    }
    total / y.len() as f64
}

/// Binary labels with both classes present and scores drawn from a small
/// grid so that ties are common.
pub fn binary_instance(rng: &mut impl Rng, max_n: usize) -> (Vec<usize>, Vec<f64>) {
    let n = rng.random_range(2..=max_n);
    let levels = rng.random_range(2..=40);
    loop {
        let y: Vec<usize> = (0..n).map(|_| usize::from(rng.random_bool(0.4))).collect();
        if y.contains(&0) && y.contains(&1) {
            let s = (0..n)
                .map(|_| rng.random_range(0..levels) as f64 / levels as f64)
                .collect();
            return (y, s);
        }
    }
}

pub fn multiclass_instance(rng: &mut impl Rng, max_n: usize) -> (Vec<usize>, Vec<usize>) {
    let n = rng.random_range(1..=max_n);
    let k = rng.random_range(2..=6);
    let y = (0..n).map(|_| rng.random_range(0..k)).collect();
    let p = (0..n).map(|_| rng.random_range(0..k)).collect();
    (y, p)
}

/// Largest absolute deviation of the five metrics from their oracles over
/// `count` random binary and multiclass instances.
pub fn metric_oracle_deviation(
    rng: &mut impl Rng,
    count: usize,
    max_n: usize,
) -> [(&'static str, f64); 5] {
    use stamp_core::metrics::{auc_pr, auroc, balanced_accuracy, cohens_kappa, weighted_f1};
    let mut worst = [0.0f64; 5];
    for _ in 0..count {
        let (y, s) = binary_instance(rng, max_n);
        worst[0] = worst[0].max((auroc(&y, &s).unwrap() - auroc_pairs(&y, &s)).abs());
        worst[1] =
            worst[1].max((auc_pr(&y, &s).unwrap() - average_precision_thresholds(&y, &s)).abs());
        let (y, p) = multiclass_instance(rng, max_n);
        worst[2] = worst[2]
            .max((balanced_accuracy(&y, &p).unwrap() - balanced_accuracy_scan(&y, &p)).abs());
        worst[3] = worst[3].max((cohens_kappa(&y, &p).unwrap() - kappa_scan(&y, &p)).abs());
        worst[4] = worst[4].max((weighted_f1(&y, &p).unwrap() - weighted_f1_scan(&y, &p)).abs());
    }
    [
        ("auroc", worst[0]),
        ("auc_pr", worst[1]),
        ("balanced_accuracy", worst[2]),
        ("cohens_kappa", worst[3]),
        ("weighted_f1", worst[4]),
    ]
}
