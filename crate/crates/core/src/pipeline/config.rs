use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::registration::{Metric, RegistrationParams};
use crate::tissue::SegmentationConfig;
use crate::volume::Connectivity;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CropParams {
    /// Extent kept below the top of the head along the inferior-superior axis.
    pub fov_height_mm: f64,
    pub margin_vox: usize,
}

impl Default for CropParams {
    fn default() -> Self {
        CropParams {
            fov_height_mm: 170.0,
            margin_vox: 5,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BiasParams {
    pub enabled: bool,
    pub degree: usize,
    pub iterations: usize,
}

impl Default for BiasParams {
    fn default() -> Self {
        BiasParams {
            enabled: true,
            degree: 2,
            iterations: 3,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BrainParams {
    pub registration: RegistrationParams,
    /// Threshold applied to the linearly warped atlas brain mask.
    pub mask_threshold: f64,
    pub closing_radius_vox: usize,
}

impl Default for BrainParams {
    fn default() -> Self {
        BrainParams {
            registration: RegistrationParams::default(),
            mask_threshold: 0.5,
            closing_radius_vox: 2,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IsolationParams {
    pub affine: RegistrationParams,
    pub diffeo: RegistrationParams,
    /// Margin around the affinely mapped atlas cerebellum that bounds the
    /// deformable registration domain.
    pub margin_mm: f64,
    pub closing_radius_vox: usize,
    pub smoothing_sigma_vox: f64,
    /// Intersect the adjusted mask with WM ∪ GM again, so closing cannot
    /// fill cavities back in.
    pub restrict_to_tissue: bool,
}

impl Default for IsolationParams {
    fn default() -> Self {
        IsolationParams {
            affine: RegistrationParams::default(),
            diffeo: RegistrationParams {
                levels: vec![2, 1],
                iterations: vec![60, 30],
                ..Default::default()
            },
            margin_mm: 12.0,
            closing_radius_vox: 2,
            smoothing_sigma_vox: 1.0,
            restrict_to_tissue: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NormalizationParams {
    pub affine: RegistrationParams,
    pub diffeo: RegistrationParams,
    /// Smoothing of the label channels, mm.
    pub channel_sigma_mm: f64,
}

impl Default for NormalizationParams {
    fn default() -> Self {
        NormalizationParams {
            affine: RegistrationParams::default(),
            diffeo: RegistrationParams {
                metric: Metric::MeanSquares,
                levels: vec![2, 1],
                iterations: vec![100, 60],
                total_sigma: 3.0,
                ..Default::default()
            },
            channel_sigma_mm: 2.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DetectionParams {
    /// Absolute binarisation threshold; when absent, `threshold_fraction` of
    /// the template's in-mask median.
    pub threshold: Option<f64>,
    pub threshold_fraction: f64,
    pub connectivity: Connectivity,
    /// Leave the brainstem out of the binarised template.
    pub exclude_stem: bool,
}

impl Default for DetectionParams {
    fn default() -> Self {
        DetectionParams {
            threshold: None,
            threshold_fraction: 0.1,
            connectivity: Connectivity::TwentySix,
            exclude_stem: true,
        }
    }
}

/// Every stage's parameters plus where the atlases live.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    /// Directory with `whole_brain/` and `cerebellum/` bundles.
    pub atlas_dir: Option<PathBuf>,
    pub crop: CropParams,
    pub bias: BiasParams,
    pub brain: BrainParams,
    pub segmentation: SegmentationConfig,
    pub isolation: IsolationParams,
    pub normalization: NormalizationParams,
    pub detection: DetectionParams,
    pub seed: u64,
}

impl PipelineConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: PipelineConfig = serde_json::from_str(&text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.crop.fov_height_mm > 0.0) {
            return Err(Error::Config("field-of-view height must be positive".into()));
        }
        if !(1..=4).contains(&self.bias.degree) || self.bias.iterations == 0 {
            return Err(Error::Config("bias degree must be in 1..=4 with at least one iteration".into()));
        }
        if !(0.0..=1.0).contains(&self.brain.mask_threshold) {
            return Err(Error::Config("brain mask threshold must be in [0, 1]".into()));
        }
        if !(self.isolation.margin_mm >= 0.0 && self.isolation.smoothing_sigma_vox >= 0.0) {
            return Err(Error::Config("isolation margin and smoothing must be non-negative".into()));
        }
        if !(self.normalization.channel_sigma_mm >= 0.0) {
            return Err(Error::Config("channel smoothing must be non-negative".into()));
        }
        if let Some(t) = self.detection.threshold {
            if !t.is_finite() {
                return Err(Error::Config("detection threshold must be finite".into()));
            }
        }
        if !(self.detection.threshold_fraction > 0.0 && self.detection.threshold_fraction < 1.0) {
            return Err(Error::Config("detection threshold fraction must be in (0, 1)".into()));
        }
        for p in [
            &self.brain.registration,
            &self.isolation.affine,
            &self.isolation.diffeo,
            &self.normalization.affine,
            &self.normalization.diffeo,
        ] {
            p.validate()?;
        }
        Ok(())
    }

    /// Segmentation configuration with the pipeline seed mixed in.
    pub fn segmentation_config(&self) -> SegmentationConfig {
        SegmentationConfig {
            seed: self.segmentation.seed ^ self.seed,
            ..self.segmentation.clone()
        }
    }
}
