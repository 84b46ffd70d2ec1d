//! Minimal CPU neural network library: plain-loop convolutions, transposed
//! convolutions and dense layers over `f64` ndarrays, with hand-written
//! backpropagation and an Adam optimizer.
//!
//! Everything is deterministic given the RNG used for initialization; there
//! is no threading and no SIMD trickery, so forward passes are bit-stable
//! across runs on the same platform.

mod adam;
mod arch;
mod layer;
mod network;

pub use adam::Adam;
pub use arch::{
    build_map_network, build_value_network, conv_output, deconv_output, ArchError, ArchSpec,
    ConvSpec, DeconvSpec,
};
pub use layer::{Conv2d, ConvTranspose2d, Dense, Dueling, Layer};
pub use network::{Network, ParamView};

/// Dynamic-dimension tensor used between layers.
pub type Tensor = ndarray::ArrayD<f64>;
