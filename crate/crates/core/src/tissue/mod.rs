//! Cavity-aware Bayesian tissue segmentation into WM, GM and other.

mod kde;
mod mcd;
mod sampling;
mod segment;

pub use kde::{kde_eval, kde_fit, DensityModel, FALLBACK_BANDWIDTH};
pub use mcd::{mcd_filter, McdEstimate, MCD_CUTOFF};
pub use sampling::sample_by_prior;
pub use segment::{
    segment_tissues, ClassAudit, ClassPriors, IterationAudit, SegmentationAudit, SegmentationConfig, TissueClass,
    TissueSegmentation,
};
