use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::DetectionParams;
use crate::atlas::{label, AtlasBundle};
use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::tissue::SegmentationAudit;
use crate::volume::{dice, largest_component, median, Mask, Volume};

/// Upper edges of the report size bins, mm³; bins are half-open `[lo, hi)`.
pub const SIZE_BIN_EDGES: [f64; 4] = [1000.0, 3000.0, 8000.0, 20000.0];

pub fn size_bin(volume_mm3: f64) -> &'static str {
    const NAMES: [&str; 5] = ["0-1000", "1000-3000", "3000-8000", "8000-20000", ">20000"];
    NAMES[SIZE_BIN_EDGES.iter().filter(|&&e| volume_mm3 >= e).count()]
}

/// Registration and segmentation figures collected along the pipeline.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StageMetrics {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub brain_extraction_metric: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub isolation_affine_metric: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub isolation_diffeo_metric: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub isolation_jacobian_positive: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub normalization_affine_metric: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub normalization_diffeo_metric: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub normalization_jacobian_positive: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub segmentation: Option<SegmentationAudit>,
}

#[derive(Clone, Debug)]
pub struct DamageReport {
    /// Largest missing-tissue component on the atlas grid.
    pub damage_mask: Mask,
    pub volume_mm3: f64,
    /// Atlas world frame; `None` for an empty mask.
    pub centroid_mm: Option<[f64; 3]>,
    pub size_bin: String,
    pub dice_vs_gt: Option<f64>,
    pub threshold: f64,
    pub provenance: StageMetrics,
}

/// The JSON form of a [`DamageReport`] (the mask is stored separately).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportSummary {
    pub volume_mm3: f64,
    pub voxel_count: usize,
    pub centroid_mm: Option<[f64; 3]>,
    pub size_bin: String,
    pub dice_vs_gt: Option<f64>,
    pub threshold: f64,
    pub stage_metrics: StageMetrics,
}

impl DamageReport {
    pub fn summary(&self) -> ReportSummary {
        ReportSummary {
            volume_mm3: self.volume_mm3,
            voxel_count: self.damage_mask.count(),
            centroid_mm: self.centroid_mm,
            size_bin: self.size_bin.clone(),
            dice_vs_gt: self.dice_vs_gt,
            threshold: self.threshold,
            stage_metrics: self.provenance.clone(),
        }
    }

    /// Scores against a ground-truth mask on the atlas grid.
    pub fn with_ground_truth(mut self, gt: &Mask) -> Result<Self> {
        self.dice_vs_gt = Some(dice(&self.damage_mask, gt)?);
        Ok(self)
    }

    pub fn write_json(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(&self.summary())?;
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }
}

/// Binarisation threshold: explicit, or a fraction of the template median
/// over the atlas foreground.
pub fn detection_threshold<T: Real>(atlas: &AtlasBundle<T>, params: &DetectionParams) -> f64 {
    params.threshold.unwrap_or_else(|| {
        let vals = atlas.template.values_in(&atlas.brain_mask);
        params.threshold_fraction * median(&vals).unwrap_or(0.0)
    })
}

/// Atlas-space damage: binarised template minus binarised normalised
/// image, largest connected component. The brainstem is left out of the
/// template when `exclude_stem` is set (the isolated cerebellum has none).
pub fn detect_damage<T: Real>(
    normalized: &Volume<T>,
    atlas: &AtlasBundle<T>,
    params: &DetectionParams,
) -> Result<DamageReport> {
    let geom = atlas.template.geometry();
    geom.check_same(normalized.geometry())?;
    let threshold = detection_threshold(atlas, params);
    let mut template_bin = atlas.template.threshold(T::lit(threshold));
    if params.exclude_stem {
        let stem = match (&atlas.label_map, &atlas.stem_mask) {
            (Some(l), _) => Some(l.mask_of(label::STEM)),
            (None, Some(s)) => Some(s.clone()),
            _ => None,
        };
        if let Some(s) = stem {
            template_bin = template_bin.and_not(&s)?;
        }
    }
    let normalized_bin = normalized.threshold(T::lit(threshold));
    let raw = template_bin.and_not(&normalized_bin)?;
    let damage_mask = largest_component(&raw, params.connectivity);
    let volume_mm3 = damage_mask.volume_mm3();
    Ok(DamageReport {
        centroid_mm: damage_mask.centroid_world(),
        size_bin: size_bin(volume_mm3).to_string(),
        damage_mask,
        volume_mm3,
        dice_vs_gt: None,
        threshold,
        provenance: StageMetrics::default(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::atlas::{AtlasKind, AtlasBundle};
    use crate::volume::{Geometry, LabelVolume};

    fn atlas() -> AtlasBundle<f32> {
        let g = Geometry::centered([40, 40, 40], [1.0; 3], [0.0; 3]).unwrap();
        let labels = LabelVolume::new(
            g.clone(),
            (0..g.len())
                .map(|i| {
                    let p = g.index_to_world(i);
                    let r = (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt();
                    if r < 4.0 {
                        0
                    } else if r < 10.0 {
                        label::WM
                    } else if r < 17.0 {
                        label::GM
                    } else if p[2] < -17.0 && p[0].abs() < 3.0 && p[1].abs() < 3.0 {
                        label::STEM
                    } else {
                        0
                    }
                })
                .collect(),
        )
        .unwrap();
        let template = Volume::new(
            g.clone(),
            labels.data().iter().map(|&l| [0.0, 120.0, 90.0, 120.0][l as usize]).collect(),
        )
        .unwrap();
        AtlasBundle {
            kind: AtlasKind::Cerebellum,
            wm_prob: labels.mask_of(label::WM).to_volume(),
            gm_prob: labels.mask_of(label::GM).to_volume(),
            brain_mask: template.threshold(0.0),
            stem_mask: Some(labels.mask_of(label::STEM)),
            template,
            cerebellum_mask: None,
            label_map: Some(labels),
            provenance: None,
        }
    }

    fn ball(g: &Geometry, c: [f64; 3], r: f64) -> Mask {
        Mask::from_world_fn(g.clone(), |p| {
            (0..3).map(|a| (p[a] - c[a]).powi(2)).sum::<f64>() < r * r
        })
    }

    #[test]
    fn template_as_input_has_no_damage() {
        let a = atlas();
        let r = detect_damage(&a.template, &a, &DetectionParams::default()).unwrap();
        assert_eq!(r.volume_mm3, 0.0);
        assert!(r.centroid_mm.is_none());
        assert_eq!(r.size_bin, "0-1000");
    }

    #[test]
    fn zeroed_ball_is_recovered() {
        let a = atlas();
        let g = a.template.geometry().clone();
        // 1000 mm³ ball
        let radius = (1000.0 * 3.0 / (4.0 * std::f64::consts::PI)).cbrt();
        let gt = ball(&g, [0.0, 11.0, 0.0], radius);
        let mut input = a.template.clone();
        for (v, &m) in input.data_mut().iter_mut().zip(gt.data()) {
            if m {
                *v = 0.0;
            }
        }
        let r = detect_damage(&input, &a, &DetectionParams::default())
            .unwrap()
            .with_ground_truth(&gt)
            .unwrap();
        assert!(r.dice_vs_gt.unwrap() >= 0.95);
        assert!((r.volume_mm3 / gt.volume_mm3() - 1.0).abs() < 0.1);
        assert!((r.volume_mm3 / 1000.0 - 1.0).abs() < 0.1);
    }

    #[test]
    fn background_ball_is_not_damage() {
        let a = atlas();
        let g = a.template.geometry().clone();
        let mut input = a.template.clone();
        for (v, &m) in input.data_mut().iter_mut().zip(ball(&g, [0.0; 3], 3.5).data()) {
            if m {
                *v = 0.0;
            }
        }
        let r = detect_damage(&input, &a, &DetectionParams::default()).unwrap();
        assert_eq!(r.volume_mm3, 0.0);
    }

    #[test]
    fn stem_exclusion_is_optional() {
        let a = atlas();
        let mut input = a.template.clone();
        for (v, &l) in input.data_mut().iter_mut().zip(a.label_map.as_ref().unwrap().data()) {
            if l == label::STEM {
                *v = 0.0;
            }
        }
        let with = detect_damage(&input, &a, &DetectionParams::default()).unwrap();
        assert_eq!(with.volume_mm3, 0.0);
        let params = DetectionParams {
            exclude_stem: false,
            ..Default::default()
        };
        let without = detect_damage(&input, &a, &params).unwrap();
        assert!(without.volume_mm3 > 0.0);
    }

    #[test]
    fn bins_are_half_open() {
        assert_eq!(size_bin(0.0), "0-1000");
        assert_eq!(size_bin(999.9), "0-1000");
        assert_eq!(size_bin(1000.0), "1000-3000");
        assert_eq!(size_bin(20000.0), ">20000");
        assert_eq!(size_bin(37210.0), ">20000");
    }
}
