use nalgebra::{Matrix3, UnitQuaternion, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::deform::random_deformation;
use super::spec::{DamageKind, VoiShape};
use crate::atlas::{label, AtlasBundle};
use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::volume::{morphology, Mask, MorphOp};

const ATTEMPTS: usize = 40;
const BISECTION_STEPS: usize = 30;
/// Accepted relative deviation from the target volume.
const VOLUME_TOLERANCE: f64 = 0.25;

/// Random damage VOI of roughly `target_volume_mm3` in atlas space, inside
/// the atlas WM/GM: an ellipsoid of random shape and orientation, deformed
/// by a smooth random field and clipped to tissue.
///
/// Ventricular VOIs are centred on tissue bordering the fourth-ventricle
/// pocket and must reach it; lateral ones on tissue at least
/// `midline_offset_mm` from the midline.
pub fn sample_damage_voi<T: Real>(
    kind: DamageKind,
    target_volume_mm3: f64,
    atlas: &AtlasBundle<T>,
    shape: &VoiShape,
    seed: u64,
) -> Result<Mask> {
    let labels = atlas
        .label_map
        .as_ref()
        .ok_or_else(|| Error::Config("cerebellum atlas carries no label map".into()))?;
    let geom = atlas.template.geometry();
    let tissue = labels.mask_of_any(&[label::WM, label::GM]);
    let capacity = tissue.volume_mm3();
    if !(target_volume_mm3 > 0.0 && target_volume_mm3 <= 0.5 * capacity) {
        return Err(Error::Config(format!(
            "target VOI volume {target_volume_mm3:.0} mm³ is infeasible for {capacity:.0} mm³ of atlas tissue"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let field = random_deformation(geom, shape.deformation_mm, shape.smoothness_mm, rng.random());
    let midline = tissue.centroid_world().expect("non-empty tissue")[0];
    let foreground = atlas.brain_mask.clone();
    let closed = morphology(&foreground, MorphOp::Close, shape.pocket_radius_vox);
    let pocket = closed.and_not(&foreground)?;
    let candidates: Vec<usize> = match kind {
        DamageKind::Ventricular => true_indices(&morphology(&pocket, MorphOp::Dilate, 1).and(&tissue)?),
        DamageKind::Lateral => true_indices(&tissue)
            .into_iter()
            .filter(|&i| (geom.index_to_world(i)[0] - midline).abs() >= shape.midline_offset_mm)
            .collect(),
    };
    if candidates.is_empty() {
        return Err(Error::Config(format!("atlas offers no site for a {} VOI", kind.name())));
    }
    let voxel = geom.voxel_volume();
    for _ in 0..ATTEMPTS {
        let center = geom.index_to_world(candidates[rng.random_range(0..candidates.len())]);
        let e = shape.max_elongation.ln();
        let raw: [f64; 3] = [0; 3].map(|_| rng.random_range(-e..=e).exp());
        let norm = (raw[0] * raw[1] * raw[2]).cbrt();
        let axes = raw.map(|a| a / norm);
        let q = UnitQuaternion::from_quaternion(nalgebra::Quaternion::new(
            rng.sample::<f64, _>(rand_distr::StandardNormal),
            rng.sample::<f64, _>(rand_distr::StandardNormal),
            rng.sample::<f64, _>(rand_distr::StandardNormal),
            rng.sample::<f64, _>(rand_distr::StandardNormal),
        ));
        let rot_t: Matrix3<f64> = q.to_rotation_matrix().matrix().transpose();
        // Deformed positions are fixed; only the ellipsoid scale varies.
        let local: Vec<(usize, Vector3<f64>)> = true_indices(&tissue)
            .into_iter()
            .map(|i| {
                let p = geom.index_to_world(i);
                let u = field.at(i);
                let d = Vector3::new(p[0] + u[0] - center[0], p[1] + u[1] - center[1], p[2] + u[2] - center[2]);
                (i, rot_t * d)
            })
            .collect();
        let count_at = |s: f64| -> usize {
            local
                .iter()
                .filter(|(_, d)| (0..3).map(|a| (d[a] / (s * axes[a])).powi(2)).sum::<f64>() < 1.0)
                .count()
        };
        let target_count = target_volume_mm3 / voxel;
        let (mut lo, mut hi) = (0.0, (6.0 * target_volume_mm3 / std::f64::consts::PI).cbrt() * 2.0);
        while (count_at(hi) as f64) < target_count && hi < 1e4 {
            hi *= 1.5;
        }
        for _ in 0..BISECTION_STEPS {
            let mid = 0.5 * (lo + hi);
            if (count_at(mid) as f64) < target_count {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let s = if (count_at(lo) as f64 - target_count).abs() < (count_at(hi) as f64 - target_count).abs() {
            lo
        } else {
            hi
        };
        let mut mask = Mask::empty(geom.clone());
        for (i, d) in &local {
            if (0..3).map(|a| (d[a] / (s * axes[a])).powi(2)).sum::<f64>() < 1.0 {
                mask.data_mut()[*i] = true;
            }
        }
        let vol = mask.volume_mm3();
        if (vol / target_volume_mm3 - 1.0).abs() > VOLUME_TOLERANCE {
            continue;
        }
        let ok = match kind {
            DamageKind::Ventricular => !morphology(&mask, MorphOp::Dilate, 1).and(&pocket)?.is_empty(),
            DamageKind::Lateral => {
                (mask.centroid_world().expect("non-empty")[0] - midline).abs() >= shape.midline_offset_mm
            }
        };
        if ok {
            return Ok(mask);
        }
    }
    Err(Error::Config(format!(
        "could not place a {} VOI of {target_volume_mm3:.0} mm³ within tolerance",
        kind.name()
    )))
}

fn true_indices(m: &Mask) -> Vec<usize> {
    m.data().iter().enumerate().filter(|(_, &b)| b).map(|(i, _)| i).collect()
}
