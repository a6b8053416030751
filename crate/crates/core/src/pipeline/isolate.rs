use super::brain::warp_mask;
use super::config::IsolationParams;
use crate::atlas::AtlasBundle;
use crate::error::{Error, Result};
use crate::registration::{
    register_affine_from, register_diffeomorphic, AffineTransform, CompositeTransform, RegistrationReport,
    TransformComponent,
};
use crate::scalar::Real;
use crate::tissue::TissueSegmentation;
use crate::volume::{gaussian_smooth_vox, morphology, resample, resample_mask, Identity, Interpolation, Mask, MorphOp, Volume};

#[derive(Clone, Debug)]
pub struct CerebellumIsolation<T> {
    pub cerebellum: Volume<T>,
    pub mask: Mask,
    /// Warped atlas cerebellum mask before intersection with tissue.
    pub atlas_cerebellum: Mask,
    pub affine: AffineTransform,
    /// Native-to-atlas pull-back, affine after field.
    pub transform: CompositeTransform,
    pub affine_report: RegistrationReport,
    pub diffeo_report: RegistrationReport,
    pub jacobian_positive_fraction: f64,
}

/// Cerebellum of `brain` from the whole-brain atlas cerebellum mask warped
/// by tissue-only affine and deformable registration.
///
/// The deformable stage runs on the native grid cropped to the affinely
/// mapped atlas cerebellum plus `margin_mm`.
pub fn isolate_cerebellum<T: Real>(
    brain: &Volume<T>,
    seg: &TissueSegmentation<T>,
    atlas: &AtlasBundle<T>,
    params: &IsolationParams,
    init: Option<&AffineTransform>,
) -> Result<CerebellumIsolation<T>> {
    let atlas_cb = atlas
        .cerebellum_mask
        .as_ref()
        .ok_or_else(|| Error::Isolation("atlas bundle carries no cerebellum mask".into()))?;
    let tissue = seg.tissue_mask();
    let fixed = brain.masked(&tissue)?;
    let moving = atlas.template.masked(&atlas.tissue_mask())?;
    let affine = register_affine_from(&fixed, &moving, &params.affine, init)?;

    let cb_affine = warp_mask(atlas_cb, brain, &affine.transform, 0.5)?;
    let (lo, hi) = cb_affine
        .bounding_box()
        .ok_or_else(|| Error::Isolation("atlas cerebellum maps outside the image".into()))?;
    let geom = brain.geometry();
    let dims = geom.dims();
    let sp = geom.spacing();
    let lo = [0, 1, 2].map(|a| lo[a].saturating_sub((params.margin_mm / sp[a]).ceil() as usize));
    let hi = [0, 1, 2].map(|a| (hi[a] + (params.margin_mm / sp[a]).ceil() as usize).min(dims[a]));
    let fixed_c = fixed.crop(lo, hi)?;
    let moving_c = resample(&moving, fixed_c.geometry(), &affine.transform, Interpolation::Linear)?;
    let diffeo = register_diffeomorphic(&fixed_c, &moving_c, &params.diffeo)?;

    let transform = CompositeTransform::new(vec![
        TransformComponent::Affine(affine.transform.clone()),
        TransformComponent::Field(diffeo.field.clone()),
    ]);
    let cb_crop = warp_mask(atlas_cb, &fixed_c, &transform, 0.5)?;
    let atlas_cerebellum = resample_mask(&cb_crop, geom, &Identity)?;
    let inter = tissue.and(&atlas_cerebellum)?;
    if inter.is_empty() {
        return Err(Error::Isolation("warped cerebellum does not overlap WM or GM".into()));
    }
    let closed = morphology(&inter, MorphOp::Close, params.closing_radius_vox);
    let mut ind: Vec<f32> = closed.data().iter().map(|&b| if b { 1.0 } else { 0.0 }).collect();
    if params.smoothing_sigma_vox > 0.0 {
        gaussian_smooth_vox(&mut ind, dims, [params.smoothing_sigma_vox; 3]);
    }
    let mut mask = Mask::new(geom.clone(), ind.iter().map(|&v| v > 0.5).collect())?;
    if params.restrict_to_tissue {
        mask = mask.and(&tissue)?;
    }
    Ok(CerebellumIsolation {
        cerebellum: brain.masked(&mask)?,
        mask,
        atlas_cerebellum,
        affine: affine.transform,
        transform,
        affine_report: affine.report,
        diffeo_report: diffeo.report,
        jacobian_positive_fraction: diffeo.jacobian_positive_fraction,
    })
}
