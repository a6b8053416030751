//! End-to-end damage detection: preprocessing, brain extraction, tissue
//! segmentation, cerebellum isolation, atlas normalisation and detection.

mod brain;
mod config;
mod detect;
mod isolate;
mod normalize;
mod preprocess;
mod run;

pub use brain::{extract_brain, BrainExtraction};
pub use config::{
    BiasParams, BrainParams, CropParams, DetectionParams, IsolationParams, NormalizationParams, PipelineConfig,
};
pub use detect::{detect_damage, detection_threshold, size_bin, DamageReport, ReportSummary, StageMetrics, SIZE_BIN_EDGES};
pub use isolate::{isolate_cerebellum, CerebellumIsolation};
pub use normalize::{normalize_to_atlas, Normalization};
pub use preprocess::{bias_correct, crop_fov};
pub use run::{run_pipeline, run_pipeline_on, run_stages, PartialOutput, PipelineOutput, Stage};
