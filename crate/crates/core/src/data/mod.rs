//! Embedding-grid datasets: the STEB container, split manifests and the
//! synthetic generators used for desk-scale experiments.

mod manifest;
mod steb;
mod synthetic;

pub use manifest::SplitManifest;
pub use steb::{
    read_dataset, write_dataset, AxisNames, DatasetHeader, StebReader, StebWriter, STEB_MAGIC,
    STEB_VERSION,
};
pub use synthetic::{
    generate_interaction_dataset, generate_separable_dataset, interaction_home_cells,
    interaction_signatures, InteractionSpec, SeparableSpec,
};

use crate::error::{Result, StampError};
use crate::tensor::Tensor;

/// One sample: an `S×T×ℓ` grid of frozen embeddings with its class label.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingGrid {
    sample_id: String,
    label: usize,
    dims: [usize; 3],
    embeddings: Vec<f32>,
}

impl EmbeddingGrid {
    pub fn new(
        sample_id: impl Into<String>,
        label: usize,
        dims: [usize; 3],
        embeddings: Vec<f32>,
    ) -> Result<Self> {
        let sample_id = sample_id.into();
        let n: usize = dims.iter().product();
        if embeddings.len() != n {
            return Err(StampError::Data(format!(
                "sample `{sample_id}`: {} values for dims {dims:?}",
                embeddings.len()
            )));
        }
        if let Some(i) = embeddings.iter().position(|v| !v.is_finite()) {
            return Err(StampError::Data(format!(
                "sample `{sample_id}`: non-finite value at index {i}"
            )));
        }
        Ok(Self {
            sample_id,
            label,
            dims,
            embeddings,
        })
    }

    pub fn sample_id(&self) -> &str {
        &self.sample_id
    }

    pub fn label(&self) -> usize {
        self.label
    }

    /// `[S, T, ℓ]`.
    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn embeddings(&self) -> &[f32] {
        &self.embeddings
    }

    /// Embedding vector at spatial channel `s`, temporal channel `t`.
    pub fn cell(&self, s: usize, t: usize) -> &[f32] {
        let l = self.dims[2];
        let start = (s * self.dims[1] + t) * l;
        &self.embeddings[start..start + l]
    }

    /// Standardizes the whole grid to zero mean and unit variance.
    pub fn zscore(&mut self) {
        let n = self.embeddings.len() as f64;
        let mean = self.embeddings.iter().map(|&v| v as f64).sum::<f64>() / n;
        let var = self
            .embeddings
            .iter()
            .map(|&v| (v as f64 - mean).powi(2))
            .sum::<f64>()
            / n;
        let inv = 1.0 / (var + 1e-8).sqrt();
        for v in &mut self.embeddings {
            *v = ((*v as f64 - mean) * inv) as f32;
        }
    }
}

/// In-memory dataset; every sample shares `dims`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub dims: [usize; 3],
    pub n_classes: usize,
    pub axis_names: Option<AxisNames>,
    pub samples: Vec<EmbeddingGrid>,
}

impl Dataset {
    pub fn new(dims: [usize; 3], n_classes: usize, samples: Vec<EmbeddingGrid>) -> Result<Self> {
        let ds = Self {
            dims,
            n_classes,
            axis_names: None,
            samples,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<()> {
        if self.dims.contains(&0) || self.n_classes == 0 {
            return Err(StampError::Data(format!(
                "dims {:?} and n_classes {} must be positive",
                self.dims, self.n_classes
            )));
        }
        let mut seen = std::collections::HashSet::new();
        for s in &self.samples {
            if s.dims != self.dims {
                return Err(StampError::Data(format!(
                    "sample `{}` has dims {:?}, dataset has {:?}",
                    s.sample_id, s.dims, self.dims
                )));
            }
            if s.label >= self.n_classes {
                return Err(StampError::Data(format!(
                    "sample `{}` label {} >= n_classes {}",
                    s.sample_id, s.label, self.n_classes
                )));
            }
            if !seen.insert(s.sample_id.as_str()) {
                return Err(StampError::Data(format!(
                    "duplicate sample id `{}`",
                    s.sample_id
                )));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Samples with the listed ids, in listed order.
    pub fn select(&self, ids: &[String]) -> Result<Vec<EmbeddingGrid>> {
        let index: std::collections::HashMap<&str, &EmbeddingGrid> =
            self.samples.iter().map(|s| (s.sample_id(), s)).collect();
        ids.iter()
            .map(|id| {
                index
                    .get(id.as_str())
                    .map(|s| (*s).clone())
                    .ok_or_else(|| StampError::Data(format!("manifest id `{id}` not in dataset")))
            })
            .collect()
    }

    pub fn zscore_samples(&mut self) {
        self.samples.iter_mut().for_each(EmbeddingGrid::zscore);
    }
}

/// Stacks samples into a `[batch, S, T, ℓ]` tensor plus labels.
pub fn stack_batch(samples: &[&EmbeddingGrid]) -> Result<(Tensor<f32>, Vec<usize>)> {
    let first = samples
        .first()
        .ok_or_else(|| StampError::Data("empty batch".into()))?;
    let [s, t, l] = first.dims();
    let mut data = Vec::with_capacity(samples.len() * s * t * l);
    let mut labels = Vec::with_capacity(samples.len());
    for g in samples {
        if g.dims() != first.dims() {
            return Err(StampError::Data("mixed dims in batch".into()));
        }
        data.extend_from_slice(g.embeddings());
        labels.push(g.label());
    }
    Ok((Tensor::new(vec![samples.len(), s, t, l], data)?, labels))
}
