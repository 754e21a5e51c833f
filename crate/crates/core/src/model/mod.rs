//! The regression network: a downsampling stem, three pre-activation
//! residual blocks, soft spatial attention pooling, and two fully-connected
//! layers ending in a single diopter output.

mod checkpoint;
mod network;

pub use checkpoint::{load_checkpoint, save_checkpoint, CHECKPOINT_MAGIC};
pub use network::{
    ensemble_predict, residual_block, soft_attention_pool, AttentionResNet, AttentionWeights,
    ForwardPass, ResidualBlockNodes,
};

use crate::autodiff::TensorError;
use thiserror::Error;

/// Which refraction quantity a model predicts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Target {
    SphericalEquivalent,
    Sphere,
    Cylinder,
}

impl Target {
    pub fn as_str(self) -> &'static str {
        match self {
            Target::SphericalEquivalent => "se",
            Target::Sphere => "sphere",
            Target::Cylinder => "cylinder",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "se" => Some(Target::SphericalEquivalent),
            "sphere" => Some(Target::Sphere),
            "cylinder" => Some(Target::Cylinder),
            _ => None,
        }
    }
}

impl std::fmt::Display for Target {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Architecture and initialization configuration. One model instance exists
/// per target; the architecture is identical across targets.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelConfig {
    pub input_resolution: usize,
    /// Channel widths of the two stride-2 stem convolutions.
    pub stem_channels: [usize; 2],
    /// Output channels of the three residual blocks.
    pub block_channels: [usize; 3],
    /// Stride of each block's first convolution (and skip projection).
    pub block_strides: [usize; 3],
    /// Hidden and output widths of the fully-connected head.
    pub fc_widths: [usize; 2],
    pub target: Target,
    pub seed: u64,
}

impl ModelConfig {
    /// Desk-scale default: 64x64 input, stem [8,16], blocks [16,32,64].
    pub fn new(target: Target, seed: u64) -> Self {
        Self {
            input_resolution: 64,
            stem_channels: [8, 16],
            block_channels: [16, 32, 64],
            block_strides: [1, 2, 2],
            fc_widths: [32, 1],
            target,
            seed,
        }
    }

    /// Minimal configuration used by the gradient-check suite.
    pub fn tiny(target: Target, seed: u64) -> Self {
        Self {
            input_resolution: 16,
            stem_channels: [4, 8],
            block_channels: [8, 8, 8],
            block_strides: [1, 1, 1],
            fc_widths: [32, 1],
            target,
            seed,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.fc_widths[1] != 1 {
            return Err(ModelError::BadConfig(format!(
                "final fully-connected width must be 1, got {}",
                self.fc_widths[1]
            )));
        }
        if self.fc_widths[0] == 0 {
            return Err(ModelError::BadConfig("fc hidden width must be positive".into()));
        }
        if self.stem_channels.contains(&0)
            || self.block_channels.contains(&0)
        {
            return Err(ModelError::BadConfig("channel widths must be positive".into()));
        }
        if self.block_strides.contains(&0) {
            return Err(ModelError::BadConfig("block strides must be positive".into()));
        }
        if self.feature_map_side() == 0 {
            return Err(ModelError::BadConfig(format!(
                "input resolution {} collapses to an empty feature map",
                self.input_resolution
            )));
        }
        Ok(())
    }

    /// Side length of the feature map entering the attention layer.
    pub fn feature_map_side(&self) -> usize {
        // 3x3 convolutions with padding 1: out = (s - 1) / stride + 1.
        let conv = |s: usize, stride: usize| {
            if s == 0 {
                0
            } else {
                (s - 1) / stride + 1
            }
        };
        let mut side = self.input_resolution;
        side = conv(side, 2);
        side = conv(side, 2);
        for &stride in &self.block_strides {
            side = conv(side, stride);
        }
        side
    }
}

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("batch shape {shape:?} does not match input resolution {expected}")]
    ResolutionMismatch { expected: usize, shape: Vec<usize> },
    #[error("ensemble is empty")]
    EmptyEnsemble,
    #[error("ensemble members disagree on {field}")]
    MixedEnsemble { field: &'static str },
    #[error("invalid model configuration: {0}")]
    BadConfig(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("bad checkpoint: {0}")]
    CheckpointFormat(String),
}
