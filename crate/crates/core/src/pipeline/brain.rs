use super::config::BrainParams;
use crate::atlas::AtlasBundle;
use crate::error::Result;
use crate::registration::{register_affine, AffineTransform, RegistrationReport};
use crate::scalar::Real;
use crate::volume::{morphology, resample, Interpolation, Mask, MorphOp, PointMap, Volume};

#[derive(Clone, Debug)]
pub struct BrainExtraction<T> {
    pub brain: Volume<T>,
    pub mask: Mask,
    /// Native-to-atlas pull-back found by the registration.
    pub transform: AffineTransform,
    pub report: RegistrationReport,
}

/// Brain mask from the affinely registered whole-brain atlas mask.
pub fn extract_brain<T: Real>(
    input: &Volume<T>,
    atlas: &AtlasBundle<T>,
    params: &BrainParams,
) -> Result<BrainExtraction<T>> {
    let reg = register_affine(input, &atlas.template, &params.registration)?;
    let warped = warp_mask(&atlas.brain_mask, input, &reg.transform, params.mask_threshold)?;
    let mask = morphology(&warped, MorphOp::Close, params.closing_radius_vox);
    Ok(BrainExtraction {
        brain: input.masked(&mask)?,
        mask,
        transform: reg.transform,
        report: reg.report,
    })
}

/// Pulls an atlas mask onto `target`'s grid through `map`, linear
/// interpolation of the indicator thresholded at `threshold`.
pub(crate) fn warp_mask<T: Real>(
    mask: &Mask,
    target: &Volume<T>,
    map: &dyn PointMap,
    threshold: f64,
) -> Result<Mask> {
    let ind: Volume<f32> = mask.to_volume();
    Ok(resample(&ind, target.geometry(), map, Interpolation::Linear)?.threshold(threshold as f32))
}
