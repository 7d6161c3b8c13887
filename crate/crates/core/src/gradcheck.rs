//! Finite-difference verification of tape gradients.

use serde::Serialize;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::model::{forward_logits, StampConfig, StampParams};
use crate::tensor::{Graph, MaskStream, Tensor};

/// Floor on the denominator of [`relative_error`]; keeps coordinates whose
/// true gradient is essentially zero from reporting huge ratios of rounding noise.
pub const RELATIVE_ERROR_FLOOR: f64 = 1e-6;

pub const DEFAULT_STEP: f64 = 1e-5;
pub const DEFAULT_TOLERANCE: f64 = 1e-4;

/// 3×2 grid, ℓ=8, D=8, two blocks of width 4, two heads of two queries, binary.
pub fn tiny_config() -> StampConfig {
    let mut c = StampConfig::new(3, 2, 8, 2);
    c.model_dim = 8;
    c.depth = 2;
    c.hidden = 4;
    c.heads = 2;
    c.queries = 2;
    c
}

/// Generic parameters, inputs and labels for a model check.
///
/// Parameters start from the regular initialization and every coordinate
/// is then shifted by U(-0.3, 0.3), so no table sits at an exact zero,
/// one or near-identity gate.
pub fn random_problem(
    config: &StampConfig,
    batch: usize,
    seed: u64,
) -> Result<(StampParams<Tensor<f64>>, Tensor<f64>, Vec<usize>)> {
    let mut params = StampParams::<Tensor<f64>>::init(config, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(1));
    for (_, t) in params.named_mut() {
        for v in t.data_mut() {
            *v += rng.random_range(-0.3..0.3);
        }
    }
    let shape = vec![batch, config.spatial, config.temporal, config.embed_dim];
    let n = shape.iter().product();
    let x = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    let labels = (0..batch).map(|i| i % config.n_classes).collect();
    Ok((params, Tensor::new(shape, x)?, labels))
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(RELATIVE_ERROR_FLOOR)
}

/// Central differences of `f` at `x`, one coordinate at a time.
pub fn central_difference(f: &mut dyn FnMut(&[f64]) -> f64, x: &[f64], step: f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = probe[i];
            probe[i] = orig + step;
            let up = f(&probe);
            probe[i] = orig - step;
            let down = f(&probe);
            probe[i] = orig;
            (up - down) / (2.0 * step)
        })
        .collect()
}

#[derive(Clone, Debug, Serialize)]
pub struct TableCheck {
    pub table: String,
    pub n_params: usize,
    pub max_relative_error: f64,
    /// Flat index of the worst coordinate with its analytic and numeric values.
    pub worst_index: usize,
    pub worst_analytic: f64,
    pub worst_numeric: f64,
    pub passed: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct GradcheckReport {
    pub tolerance: f64,
    pub step: f64,
    pub tables: Vec<TableCheck>,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.tables.iter().all(|t| t.passed)
    }

    pub fn worst(&self) -> Option<&TableCheck> {
        self.tables
            .iter()
            .max_by(|a, b| a.max_relative_error.total_cmp(&b.max_relative_error))
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for t in &self.tables {
            out.push_str(&format!(
                "{} {:<28} n={:<6} max_rel_err={:.3e}{}\n",
                if t.passed { "PASS" } else { "FAIL" },
                t.table,
                t.n_params,
                t.max_relative_error,
                if t.passed {
                    String::new()
                } else {
                    format!(
                        " worst[{}] analytic={:.6e} numeric={:.6e}",
                        t.worst_index, t.worst_analytic, t.worst_numeric
                    )
                }
            ));
        }
        out
    }
}

/// Training-mode-free loss used by the model check: batch cross-entropy.
fn model_loss(
    config: &StampConfig,
    params: &StampParams<Tensor<f64>>,
    inputs: &Tensor<f64>,
    labels: &[usize],
) -> Result<(
    Graph<f64>,
    StampParams<crate::tensor::Var>,
    crate::tensor::Var,
)> {
    let mut g = Graph::new();
    let vars = params.register(&mut g);
    let x = g.constant(inputs.clone());
    let mut masks = MaskStream::new(0, 0, 0);
    let logits = forward_logits(&mut g, config, &vars, x, false, &mut masks)?;
    let loss = g.cross_entropy(logits, labels)?;
    Ok((g, vars, loss))
}

/// Compares tape gradients of the batch cross-entropy against central
/// differences for every coordinate of every parameter table.
///
/// `tamper` lets callers corrupt the analytic gradient of a table before the
/// comparison; the CLI uses it to demonstrate that a wrong gradient fails.
pub fn check_model(
    config: &StampConfig,
    params: &StampParams<Tensor<f64>>,
    inputs: &Tensor<f64>,
    labels: &[usize],
    step: f64,
    tolerance: f64,
    tamper: Option<&dyn Fn(&str, &mut Tensor<f64>)>,
) -> Result<GradcheckReport> {
    let (g, vars, loss) = model_loss(config, params, inputs, labels)?;
    let mut grads = g.backward(loss)?;
    let mut analytic: Vec<(String, Tensor<f64>)> = Vec::new();
    for (name, var) in vars.named() {
        let mut t = grads
            .take(*var)
            .unwrap_or_else(|| Tensor::zeros(g.shape(*var)));
        if let Some(f) = tamper {
            f(&name, &mut t);
        }
        analytic.push((name, t));
    }

    let mut tables = Vec::new();
    for (index, (name, grad)) in analytic.iter().enumerate() {
        let base = params.named()[index].1.clone();
        let x0 = base.to_f64_vec();
        let mut probe_params = params.clone();
        let mut f = |x: &[f64]| -> f64 {
            let t = Tensor::new(base.shape().to_vec(), x.to_vec()).expect("same shape");
            *probe_params.named_mut()[index].1 = t;
            let (g, _, loss) = model_loss(config, &probe_params, inputs, labels).expect("forward");
            g.value(loss).data()[0]
        };
        let numeric = central_difference(&mut f, &x0, step);
        let mut worst = (0usize, 0.0f64);
        for (i, (&a, &n)) in grad.data().iter().zip(&numeric).enumerate() {
            let e = relative_error(a, n);
            if e > worst.1 || i == 0 {
                worst = (i, e.max(worst.1));
            }
        }
        let max_err = worst.1;
        tables.push(TableCheck {
            table: name.clone(),
            n_params: x0.len(),
            max_relative_error: max_err,
            worst_index: worst.0,
            worst_analytic: grad.data().get(worst.0).copied().unwrap_or(0.0),
            worst_numeric: numeric.get(worst.0).copied().unwrap_or(0.0),
            passed: max_err < tolerance,
        });
    }
    Ok(GradcheckReport {
        tolerance,
        step,
        tables,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn central_difference_of_cubic() {
        let mut f = |x: &[f64]| x[0].powi(3) + 2.0 * x[1];
        let d = central_difference(&mut f, &[2.0, 5.0], DEFAULT_STEP);
        assert!((d[0] - 12.0).abs() < 1e-8);
        assert!((d[1] - 2.0).abs() < 1e-8);
    }

    #[test]
    fn relative_error_floor() {
        assert_eq!(relative_error(0.0, 0.0), 0.0);
        assert!(relative_error(1.0, 1.0 + 1e-6) < 1.1e-6);
    }
}
