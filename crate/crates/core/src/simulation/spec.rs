use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::atlas::PhantomParams;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DamageKind {
    /// Touching the fourth ventricle.
    Ventricular,
    /// Inside one hemisphere, away from the midline.
    Lateral,
}

impl DamageKind {
    pub fn name(self) -> &'static str {
        match self {
            DamageKind::Ventricular => "ventricular",
            DamageKind::Lateral => "lateral",
        }
    }
}

/// Shape model for the damage VOI in atlas space.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VoiShape {
    /// 99th-percentile displacement of the shape deformation, mm.
    pub deformation_mm: f64,
    pub smoothness_mm: f64,
    /// Minimum distance of a lateral VOI centroid from the midline, mm.
    pub midline_offset_mm: f64,
    /// Largest ratio between ellipsoid semi-axes before normalisation.
    pub max_elongation: f64,
    /// Closing radius (voxels) that turns the fourth-ventricle pocket into
    /// template foreground when locating it.
    pub pocket_radius_vox: usize,
}

impl Default for VoiShape {
    fn default() -> Self {
        VoiShape {
            deformation_mm: 2.0,
            smoothness_mm: 8.0,
            midline_offset_mm: 10.0,
            max_elongation: 1.6,
            pocket_radius_vox: 4,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimulationSpec {
    pub n_subjects: usize,
    pub damages_per_subject: usize,
    /// Share of ventricular cases; the rest are lateral.
    pub ventricular_fraction: f64,
    /// Target VOI volumes are log-uniform in this range, mm³.
    pub damage_volume_range_mm3: (f64, f64),
    /// Whole-image deformation applied after injection.
    pub deformation_magnitude_mm: f64,
    pub deformation_smoothness_mm: f64,
    /// Standard deviation of the injected intensities, raw units.
    pub csf_sigma: f64,
    /// Warped-atlas tissue Dice below which a subject is rejected.
    pub quality_gate: f64,
    pub voi: VoiShape,
    pub phantom: PhantomParams,
    /// Write every pipeline intermediate per case, not just the report.
    pub save_intermediates: bool,
    pub seed: u64,
}

impl Default for SimulationSpec {
    fn default() -> Self {
        SimulationSpec {
            n_subjects: 20,
            damages_per_subject: 10,
            ventricular_fraction: 0.5,
            damage_volume_range_mm3: (500.0, 15_000.0),
            deformation_magnitude_mm: 3.0,
            deformation_smoothness_mm: 10.0,
            csf_sigma: 10.0,
            quality_gate: 0.8,
            voi: VoiShape::default(),
            phantom: PhantomParams::default(),
            save_intermediates: false,
            seed: 0,
        }
    }
}

impl SimulationSpec {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let spec: SimulationSpec = serde_json::from_str(&text)?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.damage_volume_range_mm3;
        if !(lo > 0.0 && hi >= lo && hi.is_finite()) {
            return Err(Error::Config(format!("damage volume range ({lo}, {hi}) must be positive and ordered")));
        }
        if !(self.deformation_magnitude_mm >= 0.0 && self.voi.deformation_mm >= 0.0) {
            return Err(Error::Config("deformation magnitudes must be non-negative".into()));
        }
        if !(self.deformation_smoothness_mm > 0.0 && self.voi.smoothness_mm > 0.0) {
            return Err(Error::Config("deformation smoothness must be positive".into()));
        }
        if !(self.csf_sigma > 0.0) {
            return Err(Error::Config("csf sigma must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.ventricular_fraction) || !(0.0..=1.0).contains(&self.quality_gate) {
            return Err(Error::Config("fractions must lie in [0, 1]".into()));
        }
        if !(self.voi.max_elongation >= 1.0) {
            return Err(Error::Config("VOI elongation must be at least 1".into()));
        }
        self.phantom.validate()
    }

    /// Kind of the `i`-th case overall; spreads ventricular cases evenly.
    pub fn kind_of_case(&self, i: usize) -> DamageKind {
        let f = self.ventricular_fraction;
        if ((i + 1) as f64 * f).floor() > (i as f64 * f).floor() {
            DamageKind::Ventricular
        } else {
            DamageKind::Lateral
        }
    }
}
