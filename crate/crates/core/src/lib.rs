//! Audio-visual target speech separation: numerical kernels, a small
//! reverse-mode autodiff engine, the separator and video codec models,
//! losses, profiling, synthetic data, and training loops.

pub mod attention;
pub mod audiocodec;
pub mod avf;
pub mod config;
pub mod datagen;
pub mod error;
pub mod gla;
pub mod graph;
pub mod hda;
pub mod io;
pub mod layers;
pub mod lipcoder;
pub mod losses;
pub mod numerics;
pub mod params;
pub mod pipeline;
pub mod profiler;
pub mod scalar;
pub mod separator;
pub mod tensor;

pub use error::{Error, Result};
pub use graph::{Graph, Mode, Var};
pub use params::{Init, ParamStore, Session};
pub use scalar::Scalar;
pub use tensor::Tensor;
