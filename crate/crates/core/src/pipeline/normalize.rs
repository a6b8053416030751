use super::brain::warp_mask;
use super::config::NormalizationParams;
use crate::atlas::{label, AtlasBundle};
use crate::error::{Error, Result};
use crate::registration::{
    label_channels, register_affine_from, register_diffeomorphic_channels, AffineTransform, CompositeTransform,
    RegistrationReport, TransformComponent,
};
use crate::scalar::Real;
use crate::tissue::TissueSegmentation;
use crate::volume::{resample, resample_labels, Interpolation, LabelVolume, Mask, Volume};

const CHANNEL_LABELS: [u16; 3] = [label::WM, label::GM, label::STEM];

#[derive(Clone, Debug)]
pub struct Normalization<T> {
    /// Patient cerebellum intensities on the atlas grid.
    pub normalized: Volume<T>,
    /// Atlas-to-native pull-back, affine after field.
    pub transform: CompositeTransform,
    pub affine: AffineTransform,
    /// Patient labels before the deformable stage (affine only), atlas grid.
    pub affine_labels: LabelVolume,
    /// Patient labels through the full transform, atlas grid.
    pub labels: LabelVolume,
    pub affine_report: RegistrationReport,
    pub diffeo_report: RegistrationReport,
    pub jacobian_positive_fraction: f64,
}

/// Maps the isolated cerebellum into the cerebellum atlas: intensity affine
/// on WM/GM, then deformable registration of smoothed label channels
/// (WM 1, GM 2, stem 3). Stem voxels are the patient's tissue outside the
/// cerebellum mask that falls in the affinely mapped atlas stem.
pub fn normalize_to_atlas<T: Real>(
    cereb: &Volume<T>,
    cereb_mask: &Mask,
    seg: &TissueSegmentation<T>,
    atlas: &AtlasBundle<T>,
    params: &NormalizationParams,
    init: Option<&AffineTransform>,
) -> Result<Normalization<T>> {
    let atlas_labels = atlas
        .label_map
        .as_ref()
        .ok_or_else(|| Error::Normalization("cerebellum atlas carries no label map".into()))?;
    let ageom = atlas.template.geometry();
    let fixed = atlas.template.masked(&atlas_labels.mask_of_any(&[label::WM, label::GM]))?;
    let affine = register_affine_from(&fixed, cereb, &params.affine, init)?;

    let ngeom = cereb.geometry();
    let stem_native = match &atlas.stem_mask {
        Some(s) => warp_mask(s, cereb, &affine.transform.inverse(), 0.5)?,
        None => Mask::empty(ngeom.clone()),
    };
    let tissue = seg.tissue_mask();
    let mut native = LabelVolume::zeros(ngeom.clone());
    for i in 0..ngeom.len() {
        native.data_mut()[i] = if cereb_mask.data()[i] {
            if seg.wm_mask.data()[i] {
                label::WM
            } else if seg.gm_mask.data()[i] {
                label::GM
            } else {
                label::BACKGROUND
            }
        } else if stem_native.data()[i] && tissue.data()[i] {
            label::STEM
        } else {
            label::BACKGROUND
        };
    }
    let affine_labels = resample_labels(&native, ageom, &affine.transform)?;
    let present = affine_labels.labels();
    if !(present.contains(&label::WM) && present.contains(&label::GM)) {
        return Err(Error::Normalization(format!(
            "patient label volume is degenerate (labels {present:?})"
        )));
    }
    let fixed_ch: Vec<Volume<T>> = label_channels(atlas_labels, &CHANNEL_LABELS, params.channel_sigma_mm)?;
    let moving_ch: Vec<Volume<T>> = label_channels(&affine_labels, &CHANNEL_LABELS, params.channel_sigma_mm)?;
    let diffeo = register_diffeomorphic_channels(&fixed_ch, &moving_ch, &params.diffeo)?;

    let transform = CompositeTransform::new(vec![
        TransformComponent::Affine(affine.transform.clone()),
        TransformComponent::Field(diffeo.field),
    ]);
    let normalized = resample(cereb, ageom, &transform, Interpolation::Linear)?;
    let labels = resample_labels(&native, ageom, &transform)?;
    Ok(Normalization {
        normalized,
        transform,
        affine: affine.transform,
        affine_labels,
        labels,
        affine_report: affine.report,
        diffeo_report: diffeo.report,
        jacobian_positive_fraction: diffeo.jacobian_positive_fraction,
    })
}
