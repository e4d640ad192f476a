//! Neural-network layers on top of the autodiff tape.
//!
//! Layers are plain descriptions (shapes plus a parameter-path prefix). Their
//! parameters live in a [`LayerParams`] set, created by each layer's `init` and read
//! during `forward` through a [`Graph`].

mod attention;
mod graph;
pub mod init;
pub mod layers;
mod params;
mod residual;

pub use attention::{AttentionSpec, MultiHeadAttention, PatchEmbed, TransformerBlock};
pub use graph::Graph;
pub use layers::{BatchNorm2d, Conv2d, LayerNorm, Linear};
pub use params::{LayerParams, Mode, ParamKind};
pub use residual::{BlockKind, ResidualBlock, ResidualBlockSpec};
