//! Infrared/visible image fusion via a two-branch decomposition autoencoder.
//!
//! An encoder splits a grayscale image into low-frequency "background" and
//! high-frequency "detail" feature maps; a decoder with skip connections
//! reconstructs the image from them. Training pulls the two modalities'
//! background maps together and pushes their detail maps apart; at test time
//! the per-source feature maps are merged by a fusion rule and decoded into a
//! single fused image. The crate also ships a classical two-scale baseline,
//! six fusion-quality metrics, and a CLI binding it all together.

pub mod baseline;
pub mod cli;
pub mod data_io;
pub mod error;
pub mod fusion;
pub mod image;
pub mod loss;
pub mod metrics;
pub mod net;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
