use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Result, StampError};

/// Which learnable positional tables are added to the reduced grid.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PeMode {
    #[serde(rename = "none")]
    None,
    /// Token-wise table only (`p_ij`).
    #[serde(rename = "N")]
    Token,
    /// Spatial and temporal tables only (`s_i + t_j`).
    #[serde(rename = "ST")]
    SpatialTemporal,
    /// All three tables.
    #[serde(rename = "NST")]
    All,
}

impl PeMode {
    pub const ALL: [PeMode; 4] = [
        PeMode::None,
        PeMode::Token,
        PeMode::SpatialTemporal,
        PeMode::All,
    ];

    pub fn has_token(self) -> bool {
        matches!(self, PeMode::Token | PeMode::All)
    }

    pub fn has_spatial_temporal(self) -> bool {
        matches!(self, PeMode::SpatialTemporal | PeMode::All)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Mixer {
    #[serde(rename = "none")]
    None,
    /// Single gating map over the flattened token axis.
    #[serde(rename = "b_gmlp")]
    BasicGmlp,
    /// Separate temporal and spatial gating maps.
    #[serde(rename = "cc_gmlp")]
    CrissCrossGmlp,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Aggregator {
    #[serde(rename = "mean")]
    Mean,
    #[serde(rename = "mhap")]
    Mhap,
}

macro_rules! text_enum {
    ($ty:ty, $what:literal, { $($variant:path => $text:literal),+ $(,)? }) => {
        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(match self { $($variant => $text),+ })
            }
        }

        impl FromStr for $ty {
            type Err = StampError;

            fn from_str(s: &str) -> Result<Self> {
                match s {
                    $($text => Ok($variant),)+
                    other => Err(StampError::Config(format!(
                        concat!("unknown ", $what, " `{}`"),
                        other
                    ))),
                }
            }
        }
    };
}

text_enum!(PeMode, "positional encoding mode", {
    PeMode::None => "none",
    PeMode::Token => "N",
    PeMode::SpatialTemporal => "ST",
    PeMode::All => "NST",
});
text_enum!(Mixer, "mixer", {
    Mixer::None => "none",
    Mixer::BasicGmlp => "b_gmlp",
    Mixer::CrissCrossGmlp => "cc_gmlp",
});
text_enum!(Aggregator, "aggregator", {
    Aggregator::Mean => "mean",
    Aggregator::Mhap => "mhap",
});

/// Architecture of one adapter instance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StampConfig {
    /// Spatial channels `S`.
    pub spatial: usize,
    /// Temporal channels `T`.
    pub temporal: usize,
    /// Width `ℓ` of the frozen embeddings.
    pub embed_dim: usize,
    /// Reduced width `D`.
    pub model_dim: usize,
    /// Number of mixer blocks `L`.
    pub depth: usize,
    /// Gating feedforward width `h`.
    pub hidden: usize,
    /// Pooling heads `A`.
    pub heads: usize,
    /// Queries per head `Q`.
    pub queries: usize,
    pub n_classes: usize,
    pub pe_mode: PeMode,
    pub mixer: Mixer,
    pub aggregator: Aggregator,
    /// Weight of the pooled summary against the token mean in the output head.
    pub lambda_mix: f64,
    pub dropout: f64,
    pub layer_norm_eps: f64,
}

impl StampConfig {
    /// Default architecture for a given grid shape and class count.
    pub fn new(spatial: usize, temporal: usize, embed_dim: usize, n_classes: usize) -> Self {
        Self {
            spatial,
            temporal,
            embed_dim,
            model_dim: 128,
            depth: 8,
            hidden: 256,
            heads: 4,
            queries: 8,
            n_classes,
            pe_mode: PeMode::All,
            mixer: Mixer::CrissCrossGmlp,
            aggregator: Aggregator::Mhap,
            lambda_mix: 0.5,
            dropout: 0.3,
            layer_norm_eps: 1e-5,
        }
    }

    pub fn tokens(&self) -> usize {
        self.spatial * self.temporal
    }

    /// Per-head width `d = D / A`.
    pub fn head_dim(&self) -> usize {
        self.model_dim / self.heads.max(1)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("spatial", self.spatial),
            ("temporal", self.temporal),
            ("embed_dim", self.embed_dim),
            ("model_dim", self.model_dim),
            ("n_classes", self.n_classes),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(StampError::Config(format!("{name} must be positive")));
            }
        }
        if self.n_classes < 2 {
            return Err(StampError::Config("n_classes must be at least 2".into()));
        }
        if self.mixer != Mixer::None
            && (self.hidden == 0 || !self.hidden.is_multiple_of(2)) {
                return Err(StampError::Config(format!(
                    "hidden width {} must be positive and even",
                    self.hidden
                )));
            }
        if self.aggregator == Aggregator::Mhap {
            if self.heads == 0 || self.queries == 0 {
                return Err(StampError::Config(
                    "heads and queries must be positive".into(),
                ));
            }
            if !self.model_dim.is_multiple_of(self.heads) {
                return Err(StampError::Config(format!(
                    "model_dim {} not divisible by heads {}",
                    self.model_dim, self.heads
                )));
            }
        }
        if !(0.0..=1.0).contains(&self.lambda_mix) {
            return Err(StampError::Config(format!(
                "lambda_mix {} outside [0, 1]",
                self.lambda_mix
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(StampError::Config(format!(
                "dropout {} outside [0, 1)",
                self.dropout
            )));
        }
        if !(self.layer_norm_eps > 0.0) {
            return Err(StampError::Config("layer_norm_eps must be positive".into()));
        }
        Ok(())
    }
}
