//! Detection and measurement of postoperative cerebellar damage in 3D T1
//! volumes.
//!
//! The crate segments brain tissue with a cavity-aware Bayesian model,
//! isolates the cerebellum through whole-brain atlas registration, normalises
//! it into a cerebellum atlas with label-driven diffeomorphic registration and
//! reports missing tissue in atlas space. A simulation harness fabricates
//! damage with known ground truth on healthy volumes.

pub mod atlas;
pub mod error;
pub mod evaluation;
pub mod pipeline;
pub mod registration;
pub mod scalar;
pub mod simulation;
pub mod tissue;
pub mod volume;

pub use error::{Error, Result};
pub use scalar::Real;
pub use volume::{DataType, Geometry, LabelVolume, Mask, Volume};

/// Single-precision intensity volume, the pipeline's working image type.
pub type Image = Volume<f32>;
/// Double-precision intensity volume.
pub type Image64 = Volume<f64>;
