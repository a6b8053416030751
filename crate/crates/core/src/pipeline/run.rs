use std::path::Path;

use super::brain::{extract_brain, BrainExtraction};
use super::config::PipelineConfig;
use super::detect::{detect_damage, DamageReport, StageMetrics};
use super::isolate::{isolate_cerebellum, CerebellumIsolation};
use super::normalize::{normalize_to_atlas, Normalization};
use super::preprocess::{bias_correct, crop_fov};
use crate::atlas::AtlasPair;
use crate::error::{Error, Result, StageExt};
use crate::registration::{apply, CompositeTransform};
use crate::volume::Interpolation;
use crate::scalar::Real;
use crate::tissue::{segment_tissues, TissueSegmentation};
use crate::volume::{nifti, otsu_threshold, Mask, Volume};

/// Every intermediate of one pipeline run.
#[derive(Clone, Debug)]
pub struct PipelineOutput<T> {
    pub cropped: Volume<T>,
    pub bias_corrected: Volume<T>,
    pub brain: BrainExtraction<T>,
    pub segmentation: TissueSegmentation<T>,
    pub isolation: CerebellumIsolation<T>,
    pub normalization: Normalization<T>,
    pub report: DamageReport,
}

impl<T: Real> PipelineOutput<T> {
    /// Writes the intermediates and `report.json` into `dir`.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        PartialOutput {
            cropped: self.cropped.clone(),
            bias_corrected: Some(self.bias_corrected.clone()),
            brain: Some(self.brain.clone()),
            segmentation: Some(self.segmentation.clone()),
            isolation: Some(self.isolation.clone()),
            normalization: Some(self.normalization.clone()),
            report: Some(self.report.clone()),
        }
        .save(dir)
    }
}

/// Loads the image and atlases named by `config`, runs every stage and
/// persists the results under `out_dir`.
pub fn run_pipeline(t1_path: impl AsRef<Path>, config: &PipelineConfig, out_dir: impl AsRef<Path>) -> Result<PipelineOutput<f32>> {
    let atlas_dir = config
        .atlas_dir
        .as_ref()
        .ok_or_else(|| Error::Config("no atlas directory configured".into()))?;
    let atlases = AtlasPair::load(atlas_dir).stage("load")?;
    let input: Volume<f32> = nifti::load_nifti(t1_path).stage("load")?;
    let out = run_pipeline_on(&input, &atlases, config, None)?;
    out.save(out_dir).stage("save")?;
    Ok(out)
}

/// Pipeline stages in execution order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Stage {
    Crop,
    Bias,
    ExtractBrain,
    Segment,
    Isolate,
    Normalize,
    Detect,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::Crop => "crop",
            Stage::Bias => "bias",
            Stage::ExtractBrain => "extract_brain",
            Stage::Segment => "segment",
            Stage::Isolate => "isolate",
            Stage::Normalize => "normalize",
            Stage::Detect => "detect",
        }
    }
}

/// Outputs of the stages run so far.
#[derive(Clone, Debug)]
pub struct PartialOutput<T> {
    pub cropped: Volume<T>,
    pub bias_corrected: Option<Volume<T>>,
    pub brain: Option<BrainExtraction<T>>,
    pub segmentation: Option<TissueSegmentation<T>>,
    pub isolation: Option<CerebellumIsolation<T>>,
    pub normalization: Option<Normalization<T>>,
    pub report: Option<DamageReport>,
}

impl<T: Real> PartialOutput<T> {
    /// Writes whatever has been computed into `dir`.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        nifti::save_nifti(&self.cropped, dir.join("cropped.nii.gz"))?;
        if let Some(v) = &self.bias_corrected {
            nifti::save_nifti(v, dir.join("bias_corrected.nii.gz"))?;
        }
        if let Some(b) = &self.brain {
            nifti::save_nifti(&b.brain, dir.join("brain.nii.gz"))?;
            nifti::save_mask(&b.mask, dir.join("brain_mask.nii.gz"))?;
            CompositeTransform::from(b.transform.clone()).save(dir.join("transforms"), "brain_affine")?;
        }
        if let Some(s) = &self.segmentation {
            s.save(dir.join("segmentation"))?;
        }
        if let Some(i) = &self.isolation {
            nifti::save_nifti(&i.cerebellum, dir.join("cerebellum.nii.gz"))?;
            nifti::save_mask(&i.mask, dir.join("cerebellum_mask.nii.gz"))?;
            i.transform.save(dir.join("transforms"), "native_to_whole_brain")?;
        }
        if let Some(n) = &self.normalization {
            nifti::save_nifti(&n.normalized, dir.join("normalized.nii.gz"))?;
            nifti::save_labels(&n.labels, dir.join("normalized_labels.nii.gz"))?;
            n.transform.save(dir.join("transforms"), "atlas_to_native")?;
        }
        if let Some(r) = &self.report {
            nifti::save_mask(&r.damage_mask, dir.join("damage_mask.nii.gz"))?;
            r.write_json(dir.join("report.json"))?;
        }
        Ok(())
    }
}

/// Runs the stages up to and including `until`.
pub fn run_stages<T: Real>(
    input: &Volume<T>,
    atlases: &AtlasPair<T>,
    config: &PipelineConfig,
    until: Stage,
    ground_truth: Option<&Mask>,
) -> Result<PartialOutput<T>> {
    config.validate()?;
    let wb = &atlases.whole_brain;
    let cb = &atlases.cerebellum;
    let cropped = crop_fov(input, &config.crop).stage(Stage::Crop.name())?;
    let mut out = PartialOutput {
        cropped,
        bias_corrected: None,
        brain: None,
        segmentation: None,
        isolation: None,
        normalization: None,
        report: None,
    };
    if until < Stage::Bias {
        return Ok(out);
    }
    let cropped = &out.cropped;
    let bias_corrected = if config.bias.enabled {
        let head = otsu_threshold(cropped.data())
            .map(|t| cropped.threshold(T::lit(t)))
            .ok_or_else(|| Error::Preprocessing("cropped image is constant".into()))
            .stage(Stage::Bias.name())?;
        bias_correct(cropped, &head, config.bias.degree, config.bias.iterations).stage(Stage::Bias.name())?
    } else {
        cropped.clone()
    };
    let bias_corrected = out.bias_corrected.insert(bias_corrected);
    if until < Stage::ExtractBrain {
        return Ok(out);
    }

    let brain = extract_brain(bias_corrected, wb, &config.brain).stage(Stage::ExtractBrain.name())?;
    let brain = out.brain.insert(brain);
    if until < Stage::Segment {
        return Ok(out);
    }

    let segmentation = (|| {
        let native = brain.brain.geometry();
        let to_atlas: CompositeTransform = brain.transform.clone().into();
        let wm = apply(&to_atlas, &wb.wm_prob, native, Interpolation::Linear)?;
        let gm = apply(&to_atlas, &wb.gm_prob, native, Interpolation::Linear)?;
        segment_tissues(&brain.brain, &brain.mask, &wm, &gm, &config.segmentation_config())
    })()
    .stage(Stage::Segment.name())?;
    let segmentation = out.segmentation.insert(segmentation);
    if until < Stage::Isolate {
        return Ok(out);
    }

    let isolation = isolate_cerebellum(&brain.brain, segmentation, wb, &config.isolation, Some(&brain.transform))
        .stage(Stage::Isolate.name())?;
    let isolation = out.isolation.insert(isolation);
    if until < Stage::Normalize {
        return Ok(out);
    }

    let init = cb.provenance.as_ref().map(|p| isolation.affine.inverse().then_after(p));
    let normalization = normalize_to_atlas(
        &isolation.cerebellum,
        &isolation.mask,
        segmentation,
        cb,
        &config.normalization,
        init.as_ref(),
    )
    .stage(Stage::Normalize.name())?;
    let normalization = out.normalization.insert(normalization);
    if until < Stage::Detect {
        return Ok(out);
    }

    let mut report = detect_damage(&normalization.normalized, cb, &config.detection).stage(Stage::Detect.name())?;
    if let Some(gt) = ground_truth {
        report = report.with_ground_truth(gt).stage(Stage::Detect.name())?;
    }
    report.provenance = StageMetrics {
        brain_extraction_metric: Some(brain.report.final_metric),
        isolation_affine_metric: Some(isolation.affine_report.final_metric),
        isolation_diffeo_metric: Some(isolation.diffeo_report.final_metric),
        isolation_jacobian_positive: Some(isolation.jacobian_positive_fraction),
        normalization_affine_metric: Some(normalization.affine_report.final_metric),
        normalization_diffeo_metric: Some(normalization.diffeo_report.final_metric),
        normalization_jacobian_positive: Some(normalization.jacobian_positive_fraction),
        segmentation: Some(segmentation.audit.clone()),
    };
    out.report = Some(report);
    Ok(out)
}

/// Runs every stage on an in-memory image. With `ground_truth` (atlas
/// grid) the report carries a Dice score.
pub fn run_pipeline_on<T: Real>(
    input: &Volume<T>,
    atlases: &AtlasPair<T>,
    config: &PipelineConfig,
    ground_truth: Option<&Mask>,
) -> Result<PipelineOutput<T>> {
    let p = run_stages(input, atlases, config, Stage::Detect, ground_truth)?;
    let missing = "all stages ran";
    Ok(PipelineOutput {
        cropped: p.cropped,
        bias_corrected: p.bias_corrected.expect(missing),
        brain: p.brain.expect(missing),
        segmentation: p.segmentation.expect(missing),
        isolation: p.isolation.expect(missing),
        normalization: p.normalization.expect(missing),
        report: p.report.expect(missing),
    })
}
