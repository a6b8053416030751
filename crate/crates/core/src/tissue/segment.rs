use std::path::Path;

use serde::{Deserialize, Serialize};

use super::kde::kde_fit;
use super::mcd::mcd_filter;
use super::sampling::sample_by_prior;
use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::volume::{gaussian_smooth_vox, nifti, Mask, Volume};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TissueClass {
    Wm,
    Gm,
    Other,
}

impl TissueClass {
    pub const ALL: [TissueClass; 3] = [TissueClass::Wm, TissueClass::Gm, TissueClass::Other];

    pub fn name(self) -> &'static str {
        match self {
            TissueClass::Wm => "WM",
            TissueClass::Gm => "GM",
            TissueClass::Other => "other",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SegmentationConfig {
    pub iterations: usize,
    /// Sample cap per class and iteration.
    pub max_samples: usize,
    pub support_fraction: f64,
    /// Constant initial prior of the other class.
    pub other_prior: f64,
    /// Posterior smoothing before thresholding, in voxels.
    pub smoothing_sigma_vox: f64,
    /// Density tabulation step as a fraction of the bandwidth.
    pub kde_table_fraction: f64,
    pub seed: u64,
}

impl Default for SegmentationConfig {
    fn default() -> Self {
        SegmentationConfig {
            iterations: 3,
            max_samples: 10_000,
            support_fraction: 0.5,
            other_prior: 0.5,
            smoothing_sigma_vox: 1.0,
            kde_table_fraction: 0.25,
            seed: 0,
        }
    }
}

/// Per-class prior volumes on the native grid.
#[derive(Clone, Debug)]
pub struct ClassPriors<T> {
    pub wm: Volume<T>,
    pub gm: Volume<T>,
    pub other: Volume<T>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ClassAudit {
    pub samples: usize,
    pub inliers: usize,
    pub mcd_mean: Option<f64>,
    pub mcd_variance: Option<f64>,
    pub bandwidth: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct IterationAudit {
    pub wm: ClassAudit,
    pub gm: ClassAudit,
    pub other: ClassAudit,
    /// Largest |Σ posterior − 1| over in-mask voxels.
    pub max_normalization_error: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SegmentationAudit {
    pub iterations: Vec<IterationAudit>,
}

#[derive(Clone, Debug)]
pub struct TissueSegmentation<T> {
    pub wm_posterior: Volume<T>,
    pub gm_posterior: Volume<T>,
    pub other_posterior: Volume<T>,
    pub wm_mask: Mask,
    pub gm_mask: Mask,
    pub other_mask: Mask,
    pub brain_mask: Mask,
    pub iterations_run: usize,
    pub audit: SegmentationAudit,
}

impl<T: Real> TissueSegmentation<T> {
    pub fn tissue_mask(&self) -> Mask {
        self.wm_mask.or(&self.gm_mask).expect("shared geometry")
    }

    pub fn posterior(&self, class: TissueClass) -> &Volume<T> {
        match class {
            TissueClass::Wm => &self.wm_posterior,
            TissueClass::Gm => &self.gm_posterior,
            TissueClass::Other => &self.other_posterior,
        }
    }

    /// Writes posteriors, masks and the audit sidecar into `dir`.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        nifti::save_nifti(&self.wm_posterior, dir.join("posterior_wm.nii.gz"))?;
        nifti::save_nifti(&self.gm_posterior, dir.join("posterior_gm.nii.gz"))?;
        nifti::save_nifti(&self.other_posterior, dir.join("posterior_other.nii.gz"))?;
        nifti::save_mask(&self.wm_mask, dir.join("wm_mask.nii.gz"))?;
        nifti::save_mask(&self.gm_mask, dir.join("gm_mask.nii.gz"))?;
        nifti::save_mask(&self.other_mask, dir.join("other_mask.nii.gz"))?;
        nifti::save_mask(&self.brain_mask, dir.join("brain_mask.nii.gz"))?;
        let path = dir.join("segmentation_audit.json");
        std::fs::write(&path, serde_json::to_string_pretty(&self.audit)?).map_err(|e| Error::io(&path, e))
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let path = dir.join("segmentation_audit.json");
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let audit: SegmentationAudit = serde_json::from_str(&text)?;
        Ok(TissueSegmentation {
            wm_posterior: nifti::load_nifti(dir.join("posterior_wm.nii.gz"))?,
            gm_posterior: nifti::load_nifti(dir.join("posterior_gm.nii.gz"))?,
            other_posterior: nifti::load_nifti(dir.join("posterior_other.nii.gz"))?,
            wm_mask: nifti::load_mask(dir.join("wm_mask.nii.gz"))?,
            gm_mask: nifti::load_mask(dir.join("gm_mask.nii.gz"))?,
            other_mask: nifti::load_mask(dir.join("other_mask.nii.gz"))?,
            brain_mask: nifti::load_mask(dir.join("brain_mask.nii.gz"))?,
            iterations_run: audit.iterations.len(),
            audit,
        })
    }
}

/// Iterated Bayesian segmentation. Priors enter unnormalised; the posterior
/// denominator normalises. WM and GM samples are MCD-filtered before density
/// fitting, the other class is not.
pub fn segment_tissues<T: Real>(
    image: &Volume<T>,
    brain_mask: &Mask,
    wm_prior: &Volume<T>,
    gm_prior: &Volume<T>,
    config: &SegmentationConfig,
) -> Result<TissueSegmentation<T>> {
    let geom = image.geometry();
    geom.check_same(brain_mask.geometry())?;
    geom.check_same(wm_prior.geometry())?;
    geom.check_same(gm_prior.geometry())?;
    if brain_mask.is_empty() {
        return Err(Error::Config("brain mask is empty".into()));
    }
    if config.iterations == 0 || config.max_samples == 0 {
        return Err(Error::Config("segmentation needs at least one iteration and one sample".into()));
    }
    if !(config.other_prior > 0.0 && config.other_prior <= 1.0) {
        return Err(Error::Config("other prior must lie in (0, 1]".into()));
    }

    let n = geom.len();
    let mask = brain_mask.data();
    let inside: Vec<usize> = (0..n).filter(|&i| mask[i]).collect();
    let clamp = |v: &Volume<T>| -> Vec<f64> { v.data().iter().map(|x| x.as_f64().clamp(0.0, 1.0)).collect() };
    let mut priors: [Vec<f64>; 3] = [clamp(wm_prior), clamp(gm_prior), vec![config.other_prior; n]];
    for p in priors.iter_mut() {
        for (i, v) in p.iter_mut().enumerate() {
            if !mask[i] {
                *v = 0.0;
            }
        }
    }
    let intensity: Vec<f64> = image.data().iter().map(|v| v.as_f64()).collect();
    let image64 = Volume::new(geom.clone(), intensity.clone())?;
    let mut audit = SegmentationAudit::default();

    for iter in 0..config.iterations {
        let mut it_audit = IterationAudit::default();
        let mut models = Vec::with_capacity(3);
        for (ci, class) in TissueClass::ALL.into_iter().enumerate() {
            let fail = |reason: String| Error::Segmentation {
                class: class.name(),
                iteration: iter + 1,
                reason,
            };
            let prior_vol = Volume::new(geom.clone(), priors[ci].clone())?;
            let seed = config.seed ^ (0x9e37_79b9_7f4a_7c15u64.wrapping_mul((iter * 3 + ci + 1) as u64));
            let samples = sample_by_prior(&image64, brain_mask, &prior_vol, config.max_samples, seed)
                .map_err(|e| fail(e.to_string()))?;
            let ca = match class {
                TissueClass::Other => {
                    let m = kde_fit(&samples).map_err(|e| fail(e.to_string()))?;
                    let ca = ClassAudit {
                        samples: samples.len(),
                        inliers: samples.len(),
                        mcd_mean: None,
                        mcd_variance: None,
                        bandwidth: m.bandwidth(),
                    };
                    models.push(m);
                    ca
                }
                _ => {
                    let (kept, mean, var) = if samples.len() >= 4 {
                        let est = mcd_filter(&samples, config.support_fraction).map_err(|e| fail(e.to_string()))?;
                        (est.inliers, Some(est.raw_mean), Some(est.variance))
                    } else {
                        (samples.clone(), None, None)
                    };
                    let m = kde_fit(&kept).map_err(|e| fail(e.to_string()))?;
                    let ca = ClassAudit {
                        samples: samples.len(),
                        inliers: kept.len(),
                        mcd_mean: mean,
                        mcd_variance: var,
                        bandwidth: m.bandwidth(),
                    };
                    models.push(m);
                    ca
                }
            };
            match class {
                TissueClass::Wm => it_audit.wm = ca,
                TissueClass::Gm => it_audit.gm = ca,
                TissueClass::Other => it_audit.other = ca,
            }
        }
        let models: Vec<_> = models.into_iter().map(|m| m.tabulate(config.kde_table_fraction)).collect();

        let mut post: [Vec<f64>; 3] = [vec![0.0; n], vec![0.0; n], vec![0.0; n]];
        let mut max_err = 0.0f64;
        for &i in &inside {
            let x = intensity[i];
            let mut joint = [0.0; 3];
            for c in 0..3 {
                joint[c] = models[c].eval_fast(x) * priors[c][i];
            }
            let mut z: f64 = joint.iter().sum();
            if !(z > 0.0) {
                // no class explains x: fall back to the priors, then uniform
                joint = [priors[0][i], priors[1][i], priors[2][i]];
                z = joint.iter().sum();
                if !(z > 0.0) {
                    joint = [1.0; 3];
                    z = 3.0;
                }
            }
            let mut s = 0.0;
            for c in 0..3 {
                post[c][i] = joint[c] / z;
                s += post[c][i];
            }
            max_err = max_err.max((s - 1.0).abs());
        }
        it_audit.max_normalization_error = max_err;
        audit.iterations.push(it_audit);
        priors = post;
    }

    // normalised convolution inside the brain mask
    let dims = geom.dims();
    let sigma = config.smoothing_sigma_vox;
    let mut weight: Vec<f64> = mask.iter().map(|&m| m as u8 as f64).collect();
    let mut smoothed = priors.clone();
    if sigma > 0.0 {
        gaussian_smooth_vox(&mut weight, dims, [sigma; 3]);
        for s in smoothed.iter_mut() {
            gaussian_smooth_vox(s, dims, [sigma; 3]);
            for (i, v) in s.iter_mut().enumerate() {
                *v = if mask[i] && weight[i] > 0.0 { *v / weight[i] } else { 0.0 };
            }
        }
    }
    let wm_mask = Mask::new(geom.clone(), (0..n).map(|i| mask[i] && smoothed[0][i] > 0.5).collect())?;
    let gm_mask = Mask::new(
        geom.clone(),
        (0..n).map(|i| mask[i] && smoothed[1][i] > 0.5 && !wm_mask.data()[i]).collect(),
    )?;
    let other_mask = brain_mask.and_not(&wm_mask.or(&gm_mask)?)?;
    let to_vol = |v: &[f64]| Volume::new(geom.clone(), v.iter().map(|&x| T::lit(x)).collect());
    Ok(TissueSegmentation {
        wm_posterior: to_vol(&priors[0])?,
        gm_posterior: to_vol(&priors[1])?,
        other_posterior: to_vol(&priors[2])?,
        wm_mask,
        gm_mask,
        other_mask,
        brain_mask: brain_mask.clone(),
        iterations_run: config.iterations,
        audit,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume::{dice, gaussian_smooth, Geometry};
    use rand::SeedableRng;
    use rand_distr::{Distribution, Normal};

    /// Nested spheres: WM core, GM shell, CSF shell; returns image, mask and
    /// the true WM/GM masks.
    fn phantom(seed: u64, cavity: bool) -> (Volume<f32>, Mask, Mask, Mask, Mask) {
        let g = Geometry::centered([40, 40, 40], [2.0; 3], [0.0; 3]).unwrap();
        let r = |p: [f64; 3]| (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt();
        let cav = |p: [f64; 3]| cavity && ((p[0] - 6.0).powi(2) + p[1].powi(2) + p[2].powi(2)).sqrt() < 13.0;
        let wm = Mask::from_world_fn(g.clone(), |p| r(p) < 20.0 && !cav(p));
        let gm = Mask::from_world_fn(g.clone(), |p| (20.0..30.0).contains(&r(p)));
        let brain = Mask::from_world_fn(g.clone(), |p| r(p) < 36.0);
        let cavity_mask = Mask::from_world_fn(g.clone(), cav);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let noise = Normal::new(0.0, 5.0).unwrap();
        let img = Volume::from_world_fn(g.clone(), |p| {
            let base = if cav(p) {
                30.0
            } else if r(p) < 20.0 {
                120.0
            } else if r(p) < 30.0 {
                90.0
            } else if r(p) < 36.0 {
                30.0
            } else {
                0.0
            };
            (base + noise.sample(&mut rng)) as f32
        });
        (img, brain, wm, gm, cavity_mask)
    }

    fn priors(g: &Geometry) -> (Volume<f32>, Volume<f32>) {
        let r = |p: [f64; 3]| (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt();
        let wm = Volume::from_world_fn(g.clone(), |p| if r(p) < 20.0 { 0.9f32 } else { 0.05 });
        let gm = Volume::from_world_fn(g.clone(), |p| if (20.0..30.0).contains(&r(p)) { 0.9f32 } else { 0.05 });
        (gaussian_smooth(&wm, 3.0).unwrap(), gaussian_smooth(&gm, 3.0).unwrap())
    }

    #[test]
    fn phantom_classes_are_recovered() {
        let (img, brain, wm, gm, _) = phantom(1, false);
        let (pw, pg) = priors(img.geometry());
        let seg = segment_tissues(&img, &brain, &pw, &pg, &SegmentationConfig::default()).unwrap();
        assert!(dice(&seg.wm_mask, &wm).unwrap() >= 0.9);
        assert!(dice(&seg.gm_mask, &gm).unwrap() >= 0.9);
        assert_eq!(seg.audit.iterations.len(), 3);
        for it in &seg.audit.iterations {
            assert!(it.max_normalization_error < 1e-6);
        }
        assert_eq!(seg.wm_mask.intersection_count(&seg.gm_mask), 0);
        let union = seg.wm_mask.or(&seg.gm_mask).unwrap().or(&seg.other_mask).unwrap();
        assert_eq!(union, brain);
    }

    #[test]
    fn cavity_goes_to_other() {
        let (img, brain, _, _, cavity) = phantom(2, true);
        let (pw, pg) = priors(img.geometry());
        let seg = segment_tissues(&img, &brain, &pw, &pg, &SegmentationConfig::default()).unwrap();
        let other = seg.other_mask.intersection_count(&cavity) as f64;
        assert!(other / cavity.count() as f64 >= 0.95, "{}", other / cavity.count() as f64);
    }

    #[test]
    fn deterministic_given_seed() {
        let (img, brain, ..) = phantom(3, false);
        let (pw, pg) = priors(img.geometry());
        let cfg = SegmentationConfig {
            seed: 11,
            ..Default::default()
        };
        let a = segment_tissues(&img, &brain, &pw, &pg, &cfg).unwrap();
        let b = segment_tissues(&img, &brain, &pw, &pg, &cfg).unwrap();
        assert_eq!(a.wm_posterior.data(), b.wm_posterior.data());
        assert_eq!(a.audit, b.audit);
    }

    #[test]
    fn equal_likelihoods_give_normalised_priors() {
        // a constant image makes every class density identical at each voxel
        let g = Geometry::new([6, 6, 6], [1.0; 3], [0.0; 3]).unwrap();
        let img = Volume::filled(g.clone(), 50.0f32);
        let pw = Volume::filled(g.clone(), 0.3f32);
        let pg = Volume::filled(g.clone(), 0.2f32);
        let cfg = SegmentationConfig {
            iterations: 1,
            ..Default::default()
        };
        let seg = segment_tissues(&img, &Mask::full(g), &pw, &pg, &cfg).unwrap();
        assert!((seg.wm_posterior.data()[0] - 0.3).abs() < 1e-6);
        assert!((seg.gm_posterior.data()[0] - 0.2).abs() < 1e-6);
        assert!((seg.other_posterior.data()[0] - 0.5).abs() < 1e-6);
    }

    #[test]
    fn collapsed_class_names_class_and_iteration() {
        let g = Geometry::new([6, 6, 6], [1.0; 3], [0.0; 3]).unwrap();
        let img = Volume::filled(g.clone(), 50.0f32);
        let pw = Volume::zeros(g.clone());
        let pg = Volume::filled(g.clone(), 0.2f32);
        let err = segment_tissues(&img, &Mask::full(g), &pw, &pg, &SegmentationConfig::default()).unwrap_err();
        assert!(matches!(err, Error::Segmentation { class: "WM", iteration: 1, .. }));
    }
}
