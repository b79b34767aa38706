//! Network side of distance-colour-coded stent assessment: a 2.5D
//! encoder-decoder that mixes in-plane and volumetric dilated residual
//! blocks, its loss and training loop, chunked volumetric inference,
//! checkpoints, and style-transfer dual-layer training.
//!
//! Everything runs on the CPU through a small reverse-mode autodiff tape
//! ([`graph`]) over `[C, D, H, W]` tensors ([`tensor`]).

pub mod checkpoint;
pub mod conv;
pub mod data;
pub mod error;
pub mod graph;
pub mod infer;
pub mod loss;
pub mod net;
pub mod params;
pub mod style;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use graph::{Graph, Grads, NodeId};
pub use params::{AdamConfig, ParamId, ParamStore};
pub use tensor::Tensor;
