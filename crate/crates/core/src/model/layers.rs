//! Adapter stages expressed as tape operations over batched grids.
//!
//! Grids are `[batch, S, T, width]`; pooled summaries are `[batch, D]`.

use super::config::{PeMode, StampConfig};
use super::params::{Block, Gate, Linear, PoolHead, StampParams};
use crate::error::{Result, StampError};
use crate::tensor::{Graph, MaskStream, Scalar, Var};

pub fn linear<F: Scalar>(g: &mut Graph<F>, x: Var, layer: &Linear<Var>) -> Result<Var> {
    let y = g.matmul(x, layer.weight)?;
    match layer.bias {
        Some(b) => g.add_trailing(y, b),
        None => Ok(y),
    }
}

/// Bias-free projection of the frozen embeddings from width `ℓ` to `D`.
pub fn reduce<F: Scalar>(g: &mut Graph<F>, embeddings: Var, weight: Var) -> Result<Var> {
    g.matmul(embeddings, weight)
}

/// Adds the positional tables selected by `mode`.
pub fn add_positional<F: Scalar>(
    g: &mut Graph<F>,
    grid: Var,
    params: &StampParams<Var>,
    mode: PeMode,
) -> Result<Var> {
    let mut table = None;
    if mode.has_token() {
        table = params.token_pe;
    }
    if mode.has_spatial_temporal() {
        let (Some(s), Some(t)) = (params.spatial_pe, params.temporal_pe) else {
            return Err(StampError::Config(format!(
                "pe mode {mode} needs spatial and temporal tables"
            )));
        };
        let (n_s, n_t) = (g.shape(s)[0], g.shape(t)[0]);
        let s_grid = g.repeat(s, 1, n_t)?;
        let t_grid = g.repeat(t, 0, n_s)?;
        let st = g.add(s_grid, t_grid)?;
        table = Some(match table {
            Some(p) => g.add(p, st)?,
            None => st,
        });
    }
    if mode.has_token() && params.token_pe.is_none() {
        return Err(StampError::Config(format!(
            "pe mode {mode} needs a token table"
        )));
    }
    match table {
        Some(t) => g.add_trailing(grid, t),
        None => Ok(grid),
    }
}

fn halves<F: Scalar>(g: &mut Graph<F>, z: Var) -> Result<(Var, Var)> {
    let h = *g.shape(z).last().unwrap_or(&0);
    if !h.is_multiple_of(2) {
        return Err(StampError::Shape(format!("gating width {h} is not even")));
    }
    let parts = g.split(z, 3, &[h / 2, h / 2])?;
    Ok((parts[0], parts[1]))
}

/// Applies `map` along `axis` of a rank-4 grid: moves the axis last,
/// multiplies, moves it back.
fn map_along_axis<F: Scalar>(
    g: &mut Graph<F>,
    x: Var,
    axis: usize,
    map: &Linear<Var>,
) -> Result<Var> {
    let mut perm: Vec<usize> = (0..4).filter(|&a| a != axis).collect();
    perm.push(axis);
    let moved = g.permute(x, &perm)?;
    let mapped = linear(g, moved, map)?;
    let mut inverse = [0usize; 4];
    for (i, &p) in perm.iter().enumerate() {
        inverse[p] = i;
    }
    g.permute(mapped, &inverse)
}

/// `Z₁ ⊙ (W_S·Z₂ + b_S)` with the map acting on the spatial axis.
pub fn spatial_gate<F: Scalar>(g: &mut Graph<F>, z: Var, map: &Linear<Var>) -> Result<Var> {
    let (z1, z2) = halves(g, z)?;
    let gate = map_along_axis(g, z2, 1, map)?;
    g.mul(z1, gate)
}

/// `Z₁ ⊙ (W_T·Z₂ + b_T)` with the map acting on the temporal axis.
pub fn temporal_gate<F: Scalar>(g: &mut Graph<F>, z: Var, map: &Linear<Var>) -> Result<Var> {
    let (z1, z2) = halves(g, z)?;
    let gate = map_along_axis(g, z2, 2, map)?;
    g.mul(z1, gate)
}

/// `Z₁ ⊙ (W·Z₂ + b)` with one map over the flattened `S·T` token axis.
pub fn token_gate<F: Scalar>(g: &mut Graph<F>, z: Var, map: &Linear<Var>) -> Result<Var> {
    let (z1, z2) = halves(g, z)?;
    let shape = g.shape(z2).to_vec();
    let flat = g.reshape(z2, &[shape[0], shape[1] * shape[2], shape[3]])?;
    let moved = g.permute(flat, &[0, 2, 1])?;
    let mapped = linear(g, moved, map)?;
    let back = g.permute(mapped, &[0, 2, 1])?;
    let gate = g.reshape(back, &shape)?;
    g.mul(z1, gate)
}

/// One gated-MLP block with pre-norm and residual:
/// `Ẽ + drop(gate(GELU(norm(Ẽ)·U))·V)`.
///
/// Criss-cross blocks concatenate the temporal pathway before the spatial one.
pub fn gmlp_block<F: Scalar>(
    g: &mut Graph<F>,
    grid: Var,
    block: &Block<Var>,
    config: &StampConfig,
    training: bool,
    masks: &mut MaskStream,
) -> Result<Var> {
    let normed = g.layer_norm(
        grid,
        block.norm_gain,
        block.norm_bias,
        config.layer_norm_eps,
    )?;
    let up = linear(g, normed, &block.up)?;
    let z = g.gelu(up);
    let mixed = match &block.gate {
        Gate::CrissCross { temporal, spatial } => {
            let zt = temporal_gate(g, z, temporal)?;
            let zs = spatial_gate(g, z, spatial)?;
            g.concat(&[zt, zs], 3)?
        }
        Gate::Basic { tokens } => token_gate(g, z, tokens)?,
    };
    let down = linear(g, mixed, &block.down)?;
    let down = g.dropout(down, config.dropout, training, masks)?;
    g.add(down, grid)
}

/// Per-head intermediate handles of [`mhap_traced`].
pub struct HeadTrace {
    /// `[batch, S·T, Q]` attention weights over tokens.
    pub attention: Var,
    /// `[batch, Q]` per-query attention mass.
    pub query_mass: Var,
    /// `[batch, Q]` softmax of the query mass.
    pub query_weights: Var,
}

/// Multi-head attention pooling over all `S·T` tokens; returns `[batch, D]`.
pub fn mhap<F: Scalar>(g: &mut Graph<F>, grid: Var, heads: &[PoolHead<Var>]) -> Result<Var> {
    mhap_traced(g, grid, heads).map(|(z, _)| z)
}

pub fn mhap_traced<F: Scalar>(
    g: &mut Graph<F>,
    grid: Var,
    heads: &[PoolHead<Var>],
) -> Result<(Var, Vec<HeadTrace>)> {
    let s = g.shape(grid).to_vec();
    let (batch, tokens, width) = (s[0], s[1] * s[2], s[3]);
    let flat = g.reshape(grid, &[batch, tokens, width])?;
    let mut summaries = Vec::with_capacity(heads.len());
    let mut traces = Vec::with_capacity(heads.len());
    for head in heads {
        // Project
        let h = linear(g, flat, &head.proj)?;
        let head_dim = g.shape(h)[2];
        let n_queries = g.shape(head.queries)[0];
        // Attend
        let rt = g.transpose(head.queries)?;
        let scores = g.matmul(h, rt)?;
        let scores = g.scale(scores, F::from_f64c(1.0 / (head_dim as f64).sqrt()));
        let alpha = g.softmax(scores, 1)?;
        // Pool
        let alpha_t = g.permute(alpha, &[0, 2, 1])?;
        let pooled = g.bmm(alpha_t, h)?;
        // Weight
        let mass = g.sum(alpha, 1)?;
        // Combine
        let weights = g.softmax(mass, 1)?;
        let w = g.reshape(weights, &[batch, 1, n_queries])?;
        let z = g.bmm(w, pooled)?;
        let z = g.reshape(z, &[batch, head_dim])?;
        summaries.push(z);
        traces.push(HeadTrace {
            attention: alpha,
            query_mass: mass,
            query_weights: weights,
        });
    }
    Ok((g.concat(&summaries, 1)?, traces))
}

/// Token mean `ê` of a `[batch, S, T, D]` grid.
pub fn token_mean<F: Scalar>(g: &mut Graph<F>, grid: Var) -> Result<Var> {
    let s = g.shape(grid).to_vec();
    let flat = g.reshape(grid, &[s[0], s[1] * s[2], s[3]])?;
    g.mean(flat, 1)
}

/// Output logits `W_out·(λz + (1−λ)ê) + b`. Without a pooled summary the
/// token mean is used alone.
pub fn head<F: Scalar>(
    g: &mut Graph<F>,
    summary: Option<Var>,
    grid: Var,
    lambda: f64,
    out: &Linear<Var>,
) -> Result<Var> {
    let mean = token_mean(g, grid)?;
    let mixed = match summary {
        Some(z) => {
            let a = g.scale(z, F::from_f64c(lambda));
            let b = g.scale(mean, F::from_f64c(1.0 - lambda));
            g.add(a, b)?
        }
        None => mean,
    };
    linear(g, mixed, out)
}
