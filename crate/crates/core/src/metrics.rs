//! Classification metrics and seed-level aggregation.

use serde::{Deserialize, Serialize};

use crate::error::{Result, StampError};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskKind {
    Binary,
    Multiclass,
}

impl TaskKind {
    pub fn for_classes(n_classes: usize) -> Self {
        if n_classes == 2 {
            TaskKind::Binary
        } else {
            TaskKind::Multiclass
        }
    }
}

fn check_lengths(a: usize, b: usize) -> Result<()> {
    if a == 0 {
        return Err(StampError::Data("metric on empty input".into()));
    }
    if a != b {
        return Err(StampError::Data(format!("{a} labels vs {b} predictions")));
    }
    Ok(())
}

/// Row = true class, column = predicted class.
pub fn confusion_matrix(
    y_true: &[usize],
    y_pred: &[usize],
    n_classes: usize,
) -> Result<Vec<Vec<u64>>> {
    check_lengths(y_true.len(), y_pred.len())?;
    let mut m = vec![vec![0u64; n_classes]; n_classes];
    for (&t, &p) in y_true.iter().zip(y_pred) {
        if t >= n_classes || p >= n_classes {
            return Err(StampError::Data(format!(
                "class index out of range for {n_classes} classes"
            )));
        }
        m[t][p] += 1;
    }
    Ok(m)
}

fn class_count(y_true: &[usize], y_pred: &[usize]) -> usize {
    y_true.iter().chain(y_pred).copied().max().unwrap_or(0) + 1
}

/// Unweighted mean of per-class recall over classes present in `y_true`.
pub fn balanced_accuracy(y_true: &[usize], y_pred: &[usize]) -> Result<f64> {
    let m = confusion_matrix(y_true, y_pred, class_count(y_true, y_pred))?;
    let recalls: Vec<f64> = m
        .iter()
        .enumerate()
        .filter_map(|(c, row)| {
            let support: u64 = row.iter().sum();
            (support > 0).then(|| row[c] as f64 / support as f64)
        })
        .collect();
    Ok(recalls.iter().sum::<f64>() / recalls.len() as f64)
}

fn binary_counts(y_true: &[usize]) -> Result<(usize, usize)> {
    if let Some(&bad) = y_true.iter().find(|&&y| y > 1) {
        return Err(StampError::Data(format!("binary metric got label {bad}")));
    }
    let pos = y_true.iter().filter(|&&y| y == 1).count();
    let neg = y_true.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(StampError::UndefinedMetric(
            "only one class present in y_true".into(),
        ));
    }
    Ok((pos, neg))
}

/// Probability that a random positive outscores a random negative, ties ½.
/// Computed from mid-ranks in `O(N log N)`.
pub fn auroc(y_true: &[usize], scores: &[f64]) -> Result<f64> {
    check_lengths(y_true.len(), scores.len())?;
    let (pos, neg) = binary_counts(y_true)?;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // 1-based mid-rank of the tie group [i, j]
        let mid = (i + j) as f64 / 2.0 + 1.0;
        rank_sum += order[i..=j].iter().filter(|&&k| y_true[k] == 1).count() as f64 * mid;
        i = j + 1;
    }
    let (p, n) = (pos as f64, neg as f64);
    Ok((rank_sum - p * (p + 1.0) / 2.0) / (p * n))
}

/// Average precision: `Σ (R_k − R_{k−1})·P_k` over descending distinct score thresholds.
pub fn auc_pr(y_true: &[usize], scores: &[f64]) -> Result<f64> {
    check_lengths(y_true.len(), scores.len())?;
    let (pos, _) = binary_counts(y_true)?;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut prev_recall = 0.0;
    let mut ap = 0.0;
    let mut i = 0;
    while i < order.len() {
        let threshold = scores[order[i]];
        while i < order.len() && scores[order[i]] == threshold {
            if y_true[order[i]] == 1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        let recall = tp as f64 / pos as f64;
        let precision = tp as f64 / (tp + fp) as f64;
        ap += (recall - prev_recall) * precision;
        prev_recall = recall;
    }
    Ok(ap)
}

/// `(p_o − p_e)/(1 − p_e)`; defined as 0 when `p_e = 1`.
pub fn cohens_kappa(y_true: &[usize], y_pred: &[usize]) -> Result<f64> {
    let k = class_count(y_true, y_pred);
    let m = confusion_matrix(y_true, y_pred, k)?;
    Ok(kappa_from_confusion(&m))
}

pub fn kappa_from_confusion(m: &[Vec<u64>]) -> f64 {
    let n: u64 = m.iter().flatten().sum();
    let n = n as f64;
    let k = m.len();
    let p_o = (0..k).map(|c| m[c][c] as f64).sum::<f64>() / n;
    let p_e = (0..k)
        .map(|c| {
            let row: u64 = m[c].iter().sum();
            let col: u64 = m.iter().map(|r| r[c]).sum();
            (row as f64 / n) * (col as f64 / n)
        })
        .sum::<f64>();
    if (1.0 - p_e).abs() < 1e-15 {
        return 0.0;
    }
    (p_o - p_e) / (1.0 - p_e)
}

/// Support-weighted mean of per-class F1.
pub fn weighted_f1(y_true: &[usize], y_pred: &[usize]) -> Result<f64> {
    let k = class_count(y_true, y_pred);
    let m = confusion_matrix(y_true, y_pred, k)?;
    let n = y_true.len() as f64;
    let mut total = 0.0;
    for c in 0..k {
        let tp = m[c][c] as f64;
        let support: u64 = m[c].iter().sum();
        let predicted: u64 = m.iter().map(|r| r[c]).sum();
        let denom = support as f64 + predicted as f64;
        let f1 = if denom == 0.0 { 0.0 } else { 2.0 * tp / denom };
        total += f1 * support as f64;
    }
    Ok(total / n)
}

/// Hard predictions from class probabilities: `p₁ ≥ 0.5` for two classes,
/// argmax (first maximum) otherwise.
pub fn predict_labels(probs: &[Vec<f64>]) -> Vec<usize> {
    probs
        .iter()
        .map(|p| {
            if p.len() == 2 {
                usize::from(p[1] >= 0.5)
            } else {
                p.iter()
                    .enumerate()
                    .fold((0, f64::NEG_INFINITY), |best, (i, &v)| {
                        if v > best.1 {
                            (i, v)
                        } else {
                            best
                        }
                    })
                    .0
            }
        })
        .collect()
}

/// Metric bundle for one split.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub task: TaskKind,
    pub n_samples: usize,
    pub balanced_accuracy: f64,
    pub auroc: Option<f64>,
    pub auc_pr: Option<f64>,
    pub cohens_kappa: Option<f64>,
    pub weighted_f1: Option<f64>,
    pub confusion: Vec<Vec<u64>>,
}

impl EvalReport {
    pub fn from_probs(y_true: &[usize], probs: &[Vec<f64>], n_classes: usize) -> Result<Self> {
        check_lengths(y_true.len(), probs.len())?;
        let task = TaskKind::for_classes(n_classes);
        let y_pred = predict_labels(probs);
        let confusion = confusion_matrix(y_true, &y_pred, n_classes)?;
        let balanced_accuracy = balanced_accuracy(y_true, &y_pred)?;
        let defined = |r: Result<f64>| match r {
            Ok(v) => Ok(Some(v)),
            Err(StampError::UndefinedMetric(_)) => Ok(None),
            Err(e) => Err(e),
        };
        let (auroc, auc_pr, cohens_kappa, weighted_f1) = match task {
            TaskKind::Binary => {
                let scores: Vec<f64> = probs.iter().map(|p| p[1]).collect();
                (
                    defined(auroc(y_true, &scores))?,
                    defined(auc_pr(y_true, &scores))?,
                    None,
                    None,
                )
            }
            TaskKind::Multiclass => (
                None,
                None,
                Some(kappa_from_confusion(&confusion)),
                Some(weighted_f1(y_true, &y_pred)?),
            ),
        };
        Ok(Self {
            task,
            n_samples: y_true.len(),
            balanced_accuracy,
            auroc,
            auc_pr,
            cohens_kappa,
            weighted_f1,
            confusion,
        })
    }

    /// AUROC for binary tasks, Cohen's kappa otherwise; balanced accuracy
    /// when the preferred metric is undefined on this split.
    pub fn monitor(&self) -> (&'static str, f64) {
        match self.task {
            TaskKind::Binary => match self.auroc {
                Some(v) => ("auroc", v),
                None => ("balanced_accuracy", self.balanced_accuracy),
            },
            TaskKind::Multiclass => (
                "cohens_kappa",
                self.cohens_kappa.unwrap_or(self.balanced_accuracy),
            ),
        }
    }

    /// Defined metrics in a fixed order.
    pub fn values(&self) -> Vec<(&'static str, f64)> {
        let mut v = vec![("balanced_accuracy", self.balanced_accuracy)];
        let opt = [
            ("auc_pr", self.auc_pr),
            ("auroc", self.auroc),
            ("cohens_kappa", self.cohens_kappa),
            ("weighted_f1", self.weighted_f1),
        ];
        v.extend(opt.into_iter().filter_map(|(k, x)| x.map(|x| (k, x))));
        v
    }

    pub fn to_text(&self) -> String {
        let mut out = format!(
            "task = {}\nn_samples = {}\n",
            match self.task {
                TaskKind::Binary => "binary",
                TaskKind::Multiclass => "multiclass",
            },
            self.n_samples
        );
        for (k, v) in self.values() {
            out.push_str(&format!("{k} = {v:.6}\n"));
        }
        let rows: Vec<String> = self
            .confusion
            .iter()
            .map(|r| r.iter().map(u64::to_string).collect::<Vec<_>>().join(","))
            .collect();
        out.push_str(&format!("confusion = {}\n", rows.join(";")));
        out
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub name: String,
    pub mean: f64,
    pub std: f64,
}

/// Mean ± sample standard deviation of each metric across seeds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedAggregate {
    pub task: TaskKind,
    pub n_runs: usize,
    pub metrics: Vec<MetricSummary>,
}

impl SeedAggregate {
    pub fn get(&self, name: &str) -> Option<&MetricSummary> {
        self.metrics.iter().find(|m| m.name == name)
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("n_runs = {}\n", self.n_runs);
        for m in &self.metrics {
            out.push_str(&format!(
                "{}.mean = {:.6}\n{}.std = {:.6}\n",
                m.name, m.mean, m.name, m.std
            ));
        }
        out
    }
}

/// Sample mean and `(n−1)`-denominator standard deviation (0 for one value).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

pub fn aggregate_seeds(reports: &[EvalReport]) -> Result<SeedAggregate> {
    let first = reports
        .first()
        .ok_or_else(|| StampError::Usage("no reports to aggregate".into()))?;
    if reports.iter().any(|r| r.task != first.task) {
        return Err(StampError::Usage(
            "cannot aggregate binary and multiclass reports".into(),
        ));
    }
    let names: Vec<&str> = first.values().iter().map(|(k, _)| *k).collect();
    let mut metrics = Vec::new();
    for name in names {
        let vals: Vec<f64> = reports
            .iter()
            .filter_map(|r| {
                r.values()
                    .into_iter()
                    .find(|(k, _)| *k == name)
                    .map(|(_, v)| v)
            })
            .collect();
        if vals.len() != reports.len() {
            continue;
        }
        let (mean, std) = mean_std(&vals);
        metrics.push(MetricSummary {
            name: name.to_string(),
            mean,
            std,
        });
    }
    Ok(SeedAggregate {
        task: first.task,
        n_runs: reports.len(),
        metrics,
    })
}
