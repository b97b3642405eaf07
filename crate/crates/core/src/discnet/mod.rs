//! Dynamic skip-connection restoration network.
//!
//! The network has a restoration branch (a three-scale encoder and a
//! decoder) and a condition branch. The condition encoder reads the degraded
//! image together with the degradation maps; per-scale filter generators
//! turn its features into per-pixel `s`x`s` filters that refine the encoder
//! features before they reach the decoder through skip connections.
//!
//! Everything runs on the small reverse-mode engine in [`graph`]: training
//! in `f32`, gradient checks in `f64`.

pub mod graph;
pub mod infer;
pub mod network;
pub mod optim;
pub mod tensor;
pub mod train;

pub use graph::{Gradients, Graph, NodeId};
pub use infer::{infer, infer_with_psf, InferOptions};
pub use network::{
    build_network, forward, layer_plan, param_count, ForwardOptions, ForwardTrace, NetworkParams,
    ParamNodes,
};
pub use optim::{cosine_lr, Adam};
pub use tensor::{Real, Tensor};
pub use train::{smoothed_l1, train, train_from, LossRecord, PercepMode, TrainConfig, TrainResult};

use crate::error::{ensure, Result};

/// Network shape.
#[derive(Clone, Debug, PartialEq)]
pub struct NetworkConfig {
    /// Channels at the finest scale; deeper scales use 2x and 4x.
    pub base_channels: usize,
    /// Number of scales. Fixed at 3 by the architecture.
    pub scales: usize,
    /// Dynamic filter size `s`.
    pub filter_size: usize,
    /// Kernel code length `b`.
    pub code_dim: usize,
    pub leaky_slope: f64,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        NetworkConfig {
            base_channels: 16,
            scales: 3,
            filter_size: 5,
            code_dim: crate::kernel_code::DEFAULT_CODE_DIM,
            leaky_slope: 0.1,
        }
    }
}

impl NetworkConfig {
    pub fn validate(&self) -> Result<()> {
        ensure!(self.base_channels >= 1, "base_channels must be at least 1");
        ensure!(self.scales == 3, "scales must be 3, got {}", self.scales);
        ensure!(
            [3, 5, 7, 9].contains(&self.filter_size),
            "filter_size must be one of 3, 5, 7, 9, got {}",
            self.filter_size
        );
        ensure!(self.code_dim >= 1, "code_dim must be at least 1");
        ensure!(
            self.leaky_slope.is_finite() && (0.0..1.0).contains(&self.leaky_slope),
            "leaky_slope must lie in [0, 1), got {}",
            self.leaky_slope
        );
        Ok(())
    }

    /// Channels at scale `n` (0-based).
    pub fn channels(&self, n: usize) -> usize {
        self.base_channels << n
    }
}
