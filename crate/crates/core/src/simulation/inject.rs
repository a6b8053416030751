use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::deform::random_deformation;
use super::spec::{DamageKind, SimulationSpec};
use crate::atlas::{label, AtlasBundle};
use crate::error::{Error, Result};
use crate::pipeline::{normalize_to_atlas, Normalization, NormalizationParams};
use crate::registration::{AffineTransform, CompositeTransform, DeformationField};
use crate::scalar::Real;
use crate::tissue::TissueSegmentation;
use crate::volume::{dice, median, resample, resample_mask, resample_mask_linear, Interpolation, Mask, Volume};

#[derive(Clone, Debug)]
pub struct AtlasMapping<T> {
    /// Pull-back that resamples atlas-space images onto the native grid.
    pub atlas_to_native: CompositeTransform,
    /// Warped atlas WM∪GM against the subject's cerebellar WM∪GM.
    pub dice: f64,
    pub normalization: Normalization<T>,
}

/// Registers the cerebellum atlas with an isolated healthy cerebellum and
/// checks the result against a Dice quality gate.
///
/// The subject is normalised into the atlas (the same label-driven
/// registration the pipeline uses) and the stored field inverses give the
/// atlas-to-native map.
pub fn map_atlas_to_healthy<T: Real>(
    healthy_cereb: &Volume<T>,
    cereb_mask: &Mask,
    seg: &TissueSegmentation<T>,
    atlas: &AtlasBundle<T>,
    params: &NormalizationParams,
    init: Option<&AffineTransform>,
    gate: f64,
) -> Result<AtlasMapping<T>> {
    let normalization = normalize_to_atlas(healthy_cereb, cereb_mask, seg, atlas, params, init)?;
    let atlas_to_native = normalization.transform.inverse()?;
    let atlas_tissue = match &atlas.label_map {
        Some(l) => l.mask_of_any(&[label::WM, label::GM]),
        None => atlas.tissue_mask(),
    };
    let warped = resample_mask_linear(&atlas_tissue, healthy_cereb.geometry(), &atlas_to_native)?;
    let subject = seg.tissue_mask().and(cereb_mask)?;
    let d = dice(&warped, &subject)?;
    if !(d >= gate) {
        return Err(Error::CaseRejected { dice: d, gate });
    }
    Ok(AtlasMapping {
        atlas_to_native,
        dice: d,
        normalization,
    })
}

#[derive(Clone, Debug)]
pub struct Injection<T> {
    /// Healthy image with the VOI filled, before the whole-image warp.
    pub pre_deformation: Volume<T>,
    pub image: Volume<T>,
    /// GT VOI on the native grid after the warp.
    pub gt_native: Mask,
    pub deformation: DeformationField,
    pub csf_mu: f64,
}

/// Fills `gt_voi_native` with Normal(μ, csf_sigma) draws, μ the median
/// intensity of the other-class mask, then warps image and VOI by one
/// random deformation (nearest neighbour for the VOI).
///
/// Only other-mask voxels whose own other posterior exceeds 0.5 enter μ.
/// The rest of the mask is the WM/GM interface shell that the smoothed
/// 0.5 thresholds leave unclaimed, and it carries tissue intensities.
pub fn inject_damage<T: Real>(
    healthy_t1: &Volume<T>,
    seg: &TissueSegmentation<T>,
    gt_voi_native: &Mask,
    spec: &SimulationSpec,
    seed: u64,
) -> Result<Injection<T>> {
    let geom = healthy_t1.geometry();
    geom.check_same(gt_voi_native.geometry())?;
    geom.check_same(seg.other_mask.geometry())?;
    let confident = Mask::new(
        geom.clone(),
        seg.other_mask
            .data()
            .iter()
            .zip(seg.other_posterior.data())
            .map(|(&m, p)| m && p.as_f64() > 0.5)
            .collect(),
    )?;
    let core = if confident.is_empty() { &seg.other_mask } else { &confident };
    let other = healthy_t1.values_in(core);
    let csf_mu = median(&other).ok_or_else(|| Error::Simulation("other-class mask is empty".into()))?;
    let normal = Normal::new(csf_mu, spec.csf_sigma).map_err(|e| Error::Simulation(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pre = healthy_t1.clone();
    for (v, &m) in pre.data_mut().iter_mut().zip(gt_voi_native.data()) {
        if m {
            *v = T::lit(normal.sample(&mut rng));
        }
    }
    let deformation = random_deformation(
        geom,
        spec.deformation_magnitude_mm,
        spec.deformation_smoothness_mm,
        seed ^ 0xdef0_4d,
    );
    let (image, gt_native) = if deformation.max_magnitude() == 0.0 {
        (pre.clone(), gt_voi_native.clone())
    } else {
        (
            resample(&pre, geom, &deformation, Interpolation::Linear)?,
            resample_mask(gt_voi_native, geom, &deformation)?,
        )
    };
    Ok(Injection {
        pre_deformation: pre,
        image,
        gt_native,
        deformation,
        csf_mu,
    })
}

#[derive(Clone, Debug)]
pub struct SimulatedCase<T> {
    pub simulated_t1: Volume<T>,
    pub gt_voi_atlas: Mask,
    /// Atlas VOI through `atlas_to_native` then the injection warp.
    pub gt_voi_native: Mask,
    pub atlas_to_native: CompositeTransform,
    pub csf_mu: f64,
    pub kind: DamageKind,
    pub target_volume_mm3: f64,
    pub injection: Injection<T>,
}

/// Maps an atlas VOI into the healthy image and injects it.
pub fn simulate_case<T: Real>(
    healthy_t1: &Volume<T>,
    seg: &TissueSegmentation<T>,
    atlas_to_native: &CompositeTransform,
    gt_voi_atlas: &Mask,
    kind: DamageKind,
    target_volume_mm3: f64,
    spec: &SimulationSpec,
    seed: u64,
) -> Result<SimulatedCase<T>> {
    let native = resample_mask(gt_voi_atlas, healthy_t1.geometry(), atlas_to_native)?;
    if native.is_empty() {
        return Err(Error::Simulation("VOI maps outside the subject image".into()));
    }
    let injection = inject_damage(healthy_t1, seg, &native, spec, seed)?;
    if injection.gt_native.is_empty() {
        return Err(Error::Simulation("VOI vanished under the deformation".into()));
    }
    Ok(SimulatedCase {
        simulated_t1: injection.image.clone(),
        gt_voi_atlas: gt_voi_atlas.clone(),
        gt_voi_native: injection.gt_native.clone(),
        atlas_to_native: atlas_to_native.clone(),
        csf_mu: injection.csf_mu,
        kind,
        target_volume_mm3,
        injection,
    })
}
