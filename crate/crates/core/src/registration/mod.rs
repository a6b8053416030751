//! Affine and symmetric diffeomorphic registration plus transform algebra.

mod affine;
mod channels;
mod diffeo;
mod params;
mod pyramid;
mod sampling;
pub mod transform;

pub use affine::{register_affine, register_affine_from, AffineRegistration};
pub use channels::{channel_metric, label_channels, labels_to_channels};
pub use diffeo::{register_diffeomorphic, register_diffeomorphic_channels, DiffeoRegistration};
pub use params::{Metric, RegistrationParams, RegistrationReport};
pub use transform::{apply, AffineTransform, CompositeTransform, DeformationField, TransformComponent};
