//! Axial graph builders and a mobile vision-graph backbone on NCHW feature
//! tensors.
//!
//! * [`tensor`]: dense tensors, primitive ops and the GVT file format
//! * [`autodiff`]: eager and taped execution with reverse-mode gradients
//! * [`graph`]: DAGC, SVGA and KNN graph construction and aggregation
//! * [`blocks`]: CPE, DynConv, Dynamic Grapher, FFN, MBConv, stem, downsample, head
//! * [`zoo`]: model configurations, assembly, cost accounting and weight files
//! * [`gradcheck`]: finite-difference verification of block gradients
//! * [`oracle`]: brute-force references for the graph aggregations

pub mod autodiff;
pub mod blocks;
pub mod error;
pub mod gradcheck;
pub mod graph;
pub mod oracle;
pub mod rng;
pub mod tensor;
pub mod zoo;

pub use error::{Error, Result};
pub use rng::SplitMix64;
pub use tensor::{DType, DynTensor, Element, Tensor};
pub use zoo::{Model, ModelConfig};
