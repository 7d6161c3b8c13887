//! Synthetic embedding grids with known structure.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{Dataset, EmbeddingGrid, SplitManifest};
use crate::error::{Result, StampError};

/// Class is encoded by *where* a signature sits, not by what the grid contains.
///
/// Class `c` owns a signature direction `v_c` and a home cell `(s_c, t_c)`.
/// A sample of class `c` carries `v_c` at its home cell. With distractors on,
/// every other class signature `v_k` is also present, at a random free cell
/// other than `v_k`'s own home, so the multiset of injected signatures (and
/// hence the token mean) is the same for every class.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InteractionSpec {
    pub spatial: usize,
    pub temporal: usize,
    pub embed_dim: usize,
    pub n_classes: usize,
    pub n_samples: usize,
    /// Standard deviation of the i.i.d. Gaussian noise on every coordinate.
    pub noise: f64,
    /// RMS per-coordinate amplitude of each signature.
    pub amplitude: f64,
    pub distractors: bool,
    pub seed: u64,
}

impl Default for InteractionSpec {
    fn default() -> Self {
        Self {
            spatial: 8,
            temporal: 4,
            embed_dim: 32,
            n_classes: 4,
            n_samples: 2000,
            noise: 1.0,
            amplitude: 1.0,
            distractors: true,
            seed: 42,
        }
    }
}

/// Class mean added to every cell; linearly separable after mean pooling.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeparableSpec {
    pub spatial: usize,
    pub temporal: usize,
    pub embed_dim: usize,
    pub n_classes: usize,
    pub n_samples: usize,
    pub noise: f64,
    pub amplitude: f64,
    pub seed: u64,
}

impl Default for SeparableSpec {
    fn default() -> Self {
        Self {
            spatial: 8,
            temporal: 4,
            embed_dim: 32,
            n_classes: 4,
            n_samples: 2000,
            noise: 1.0,
            amplitude: 0.5,
            seed: 42,
        }
    }
}

/// Orthonormal directions scaled to RMS `amplitude` per coordinate.
fn signatures(rng: &mut ChaCha8Rng, count: usize, dim: usize, amplitude: f64) -> Vec<Vec<f64>> {
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(count);
    while basis.len() < count {
        let mut v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
        if basis.len() < dim {
            for b in &basis {
                let dot: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
                v.iter_mut().zip(b).for_each(|(x, y)| *x -= dot * y);
            }
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-6 {
            basis.push(v.into_iter().map(|x| x / norm).collect());
        }
    }
    let scale = amplitude * (dim as f64).sqrt();
    basis
        .into_iter()
        .map(|b| b.into_iter().map(|x| x * scale).collect())
        .collect()
}

fn sample_id(i: usize) -> String {
    format!("syn{i:06}")
}

/// Shuffled 60/20/20 split of `ids`.
fn split_ids(rng: &mut ChaCha8Rng, n: usize) -> SplitManifest {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let n_train = n * 3 / 5;
    let n_val = n / 5;
    let ids = |r: &[usize]| r.iter().map(|&i| sample_id(i)).collect();
    SplitManifest::new(
        ids(&order[..n_train]),
        ids(&order[n_train..n_train + n_val]),
        ids(&order[n_train + n_val..]),
    )
}

fn noise_grid(rng: &mut ChaCha8Rng, len: usize, sigma: f64) -> Vec<f64> {
    (0..len)
        .map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            sigma * z
        })
        .collect()
}

/// Home cell (flattened `s·T + t`) of each class.
pub fn interaction_home_cells(spec: &InteractionSpec) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let _ = signatures(&mut rng, spec.n_classes, spec.embed_dim, spec.amplitude);
    home_cells(&mut rng, spec.spatial * spec.temporal, spec.n_classes)
}

fn home_cells(rng: &mut ChaCha8Rng, cells: usize, n_classes: usize) -> Vec<usize> {
    let mut all: Vec<usize> = (0..cells).collect();
    all.shuffle(rng);
    all.truncate(n_classes);
    all
}

/// Class signature directions, in class order.
pub fn interaction_signatures(spec: &InteractionSpec) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    signatures(&mut rng, spec.n_classes, spec.embed_dim, spec.amplitude)
}

pub fn generate_interaction_dataset(spec: &InteractionSpec) -> Result<(Dataset, SplitManifest)> {
    let cells = spec.spatial * spec.temporal;
    if spec.n_classes < 2 || spec.n_classes > cells {
        return Err(StampError::Config(format!(
            "interaction data needs 2 <= n_classes <= S·T = {cells}, got {}",
            spec.n_classes
        )));
    }
    if spec.distractors && 2 * spec.n_classes - 1 > cells {
        return Err(StampError::Config("too few cells for distractors".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let sigs = signatures(&mut rng, spec.n_classes, spec.embed_dim, spec.amplitude);
    let homes = home_cells(&mut rng, cells, spec.n_classes);
    let l = spec.embed_dim;
    let dims = [spec.spatial, spec.temporal, l];

    let mut samples = Vec::with_capacity(spec.n_samples);
    for i in 0..spec.n_samples {
        let label = i % spec.n_classes;
        let mut grid = noise_grid(&mut rng, cells * l, spec.noise);
        let place = |grid: &mut Vec<f64>, cell: usize, class: usize| {
            for (x, s) in grid[cell * l..(cell + 1) * l].iter_mut().zip(&sigs[class]) {
                *x += s;
            }
        };
        place(&mut grid, homes[label], label);
        if spec.distractors {
            let mut occupied = vec![homes[label]];
            for k in (0..spec.n_classes).filter(|&k| k != label) {
                let cell = loop {
                    let c = rng.random_range(0..cells);
                    if c != homes[k] && !occupied.contains(&c) {
                        break c;
                    }
                };
                occupied.push(cell);
                place(&mut grid, cell, k);
            }
        }
        let values = grid.into_iter().map(|v| v as f32).collect();
        samples.push(EmbeddingGrid::new(sample_id(i), label, dims, values)?);
    }
    let manifest = split_ids(&mut rng, spec.n_samples);
    Ok((Dataset::new(dims, spec.n_classes, samples)?, manifest))
}

pub fn generate_separable_dataset(spec: &SeparableSpec) -> Result<(Dataset, SplitManifest)> {
    if spec.n_classes < 2 {
        return Err(StampError::Config("need at least 2 classes".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let means = signatures(&mut rng, spec.n_classes, spec.embed_dim, spec.amplitude);
    let cells = spec.spatial * spec.temporal;
    let l = spec.embed_dim;
    let dims = [spec.spatial, spec.temporal, l];
    let mut samples = Vec::with_capacity(spec.n_samples);
    for i in 0..spec.n_samples {
        let label = i % spec.n_classes;
        let mut grid = noise_grid(&mut rng, cells * l, spec.noise);
        for cell in grid.chunks_mut(l) {
            cell.iter_mut()
                .zip(&means[label])
                .for_each(|(x, m)| *x += m);
        }
        let values = grid.into_iter().map(|v| v as f32).collect();
        samples.push(EmbeddingGrid::new(sample_id(i), label, dims, values)?);
    }
    let manifest = split_ids(&mut rng, spec.n_samples);
    Ok((Dataset::new(dims, spec.n_classes, samples)?, manifest))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn signatures_are_orthogonal_with_requested_rms() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let s = signatures(&mut rng, 4, 32, 1.0);
        for i in 0..4 {
            let rms = (s[i].iter().map(|x| x * x).sum::<f64>() / 32.0).sqrt();
            assert!((rms - 1.0).abs() < 1e-12);
            for j in 0..i {
                let dot: f64 = s[i].iter().zip(&s[j]).map(|(a, b)| a * b).sum();
                assert!(dot.abs() < 1e-9);
            }
        }
    }

    #[test]
    fn split_is_partition() {
        let (ds, m) = generate_interaction_dataset(&InteractionSpec {
            n_samples: 50,
            ..Default::default()
        })
        .unwrap();
        m.validate(Some(&ds)).unwrap();
        assert_eq!(m.train.len() + m.validation.len() + m.test.len(), 50);
    }

    #[test]
    fn rejects_too_many_classes() {
        let spec = InteractionSpec {
            spatial: 2,
            temporal: 1,
            n_classes: 3,
            ..Default::default()
        };
        assert!(generate_interaction_dataset(&spec).is_err());
    }
}
