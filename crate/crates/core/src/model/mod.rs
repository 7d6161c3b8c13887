//! The adapter: reduction, positional encoding, gated-MLP token mixing,
//! attention pooling and the mixed-residual classification head.

mod checkpoint;
mod config;
pub mod layers;
mod params;

pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, CHECKPOINT_MAGIC,
    CHECKPOINT_VERSION,
};
pub use config::{Aggregator, Mixer, PeMode, StampConfig};
pub use params::{param_count, Block, Gate, Linear, PoolHead, StampParams};

use crate::data::EmbeddingGrid;
use crate::error::{Result, StampError};
use crate::tensor::{Graph, MaskStream, Scalar, Tensor, Var};

/// Full forward pass from a `[batch, S, T, ℓ]` input to `[batch, n_classes]` logits.
pub fn forward_logits<F: Scalar>(
    g: &mut Graph<F>,
    config: &StampConfig,
    params: &StampParams<Var>,
    inputs: Var,
    training: bool,
    masks: &mut MaskStream,
) -> Result<Var> {
    let s = g.shape(inputs);
    let expected = [config.spatial, config.temporal, config.embed_dim];
    if s.len() != 4 || s[1..] != expected {
        return Err(StampError::Shape(format!(
            "input {s:?} does not match [batch, {}, {}, {}]",
            expected[0], expected[1], expected[2]
        )));
    }
    let reduced = layers::reduce(g, inputs, params.reduce)?;
    let mut grid = layers::add_positional(g, reduced, params, config.pe_mode)?;
    for block in &params.blocks {
        grid = layers::gmlp_block(g, grid, block, config, training, masks)?;
    }
    let summary = match config.aggregator {
        Aggregator::Mean => None,
        Aggregator::Mhap => {
            let z = layers::mhap(g, grid, &params.heads)?;
            Some(g.dropout(z, config.dropout, training, masks)?)
        }
    };
    layers::head(g, summary, grid, config.lambda_mix, &params.out)
}

/// Trained or freshly initialized adapter with `f32` parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct StampModel {
    pub config: StampConfig,
    pub params: StampParams<Tensor<f32>>,
}

impl StampModel {
    pub fn init(config: StampConfig, seed: u64) -> Result<Self> {
        let params = StampParams::init(&config, seed)?;
        Ok(Self { config, params })
    }

    pub fn param_count(&self) -> usize {
        self.params.count()
    }

    /// Class probabilities `[batch, n_classes]` in inference mode.
    pub fn predict_proba(&self, inputs: &Tensor<f32>) -> Result<Tensor<f32>> {
        let mut g = Graph::new();
        let vars = self.params.register_frozen(&mut g);
        let x = g.constant(inputs.clone());
        let mut masks = MaskStream::new(0, 0, 0);
        let logits = forward_logits(&mut g, &self.config, &vars, x, false, &mut masks)?;
        let probs = g.softmax(logits, 1)?;
        Ok(g.value(probs).clone())
    }

    /// Class probabilities for one sample. With `training` set, dropout
    /// masks are drawn from `masks`.
    pub fn forward(
        &self,
        sample: &EmbeddingGrid,
        training: bool,
        masks: &mut MaskStream,
    ) -> Result<Vec<f32>> {
        let [s, t, l] = sample.dims();
        let x = Tensor::new(vec![1, s, t, l], sample.embeddings().to_vec())?;
        let mut g = Graph::new();
        let vars = self.params.register_frozen(&mut g);
        let x = g.constant(x);
        let logits = forward_logits(&mut g, &self.config, &vars, x, training, masks)?;
        let probs = g.softmax(logits, 1)?;
        Ok(g.value(probs).data().to_vec())
    }
}
