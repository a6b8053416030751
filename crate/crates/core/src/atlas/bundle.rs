use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::phantom::{generate_phantom_on, zone, PhantomParams, Region, SubjectJitter};
use crate::error::{Error, Result};
use crate::registration::AffineTransform;
use crate::scalar::Real;
use crate::tissue::{segment_tissues, SegmentationConfig};
use crate::volume::{gaussian_smooth, multi_otsu_thresholds, nifti, otsu_threshold, LabelVolume, Mask, Volume};

/// Labels of the cerebellum atlas label map.
pub mod label {
    pub const BACKGROUND: u16 = 0;
    pub const WM: u16 = 1;
    pub const GM: u16 = 2;
    pub const STEM: u16 = 3;
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AtlasKind {
    WholeBrain,
    Cerebellum,
}

/// Template plus tissue maps and masks on one grid.
#[derive(Clone, Debug)]
pub struct AtlasBundle<T> {
    pub kind: AtlasKind,
    pub template: Volume<T>,
    pub wm_prob: Volume<T>,
    pub gm_prob: Volume<T>,
    pub brain_mask: Mask,
    /// Whole-brain bundles only.
    pub cerebellum_mask: Option<Mask>,
    /// Cerebellum bundles only.
    pub stem_mask: Option<Mask>,
    /// Cerebellum bundles only, labels {0,1,2,3}.
    pub label_map: Option<LabelVolume>,
    /// Maps this atlas's world frame into the whole-brain frame, when known.
    pub provenance: Option<AffineTransform>,
}

impl<T: Real> AtlasBundle<T> {
    pub fn validate(&self) -> Result<()> {
        let g = self.template.geometry();
        g.check_same(self.wm_prob.geometry())?;
        g.check_same(self.gm_prob.geometry())?;
        g.check_same(self.brain_mask.geometry())?;
        for m in [&self.cerebellum_mask, &self.stem_mask].into_iter().flatten() {
            g.check_same(m.geometry())?;
        }
        if let Some(l) = &self.label_map {
            g.check_same(l.geometry())?;
            l.check_label_set(&[label::BACKGROUND, label::WM, label::GM, label::STEM])?;
        }
        for (w, gm) in self.wm_prob.data().iter().zip(self.gm_prob.data()) {
            let (w, gm) = (w.as_f64(), gm.as_f64());
            if !(0.0..=1.0).contains(&w) || !(0.0..=1.0).contains(&gm) || w + gm > 1.0 + 1e-6 {
                return Err(Error::Config(format!("tissue probabilities out of range ({w}, {gm})")));
            }
        }
        if let Some(c) = &self.cerebellum_mask {
            if !c.is_subset_of(&self.brain_mask) {
                return Err(Error::Config("cerebellum mask is not inside the brain mask".into()));
            }
        }
        Ok(())
    }

    /// Tissue (WM ∪ GM) region of the template: the label map when present,
    /// otherwise probability above 0.5.
    pub fn tissue_mask(&self) -> Mask {
        match &self.label_map {
            Some(l) => l.mask_of_any(&[label::WM, label::GM]),
            None => {
                let data = self
                    .wm_prob
                    .data()
                    .iter()
                    .zip(self.gm_prob.data())
                    .map(|(w, g)| w.as_f64() + g.as_f64() > 0.5)
                    .collect();
                Mask::new(self.template.geometry().clone(), data).expect("bundle geometry")
            }
        }
    }

    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut members = BTreeMap::new();
        let mut put = |name: &str| {
            let file = format!("{name}.nii.gz");
            members.insert(name.to_string(), file.clone());
            dir.join(file)
        };
        nifti::save_nifti(&self.template, put("template"))?;
        nifti::save_nifti(&self.wm_prob, put("wm_prob"))?;
        nifti::save_nifti(&self.gm_prob, put("gm_prob"))?;
        nifti::save_mask(&self.brain_mask, put("brain_mask"))?;
        if let Some(m) = &self.cerebellum_mask {
            nifti::save_mask(m, put("cerebellum_mask"))?;
        }
        if let Some(m) = &self.stem_mask {
            nifti::save_mask(m, put("stem_mask"))?;
        }
        if let Some(l) = &self.label_map {
            nifti::save_labels(l, put("label_map"))?;
        }
        let manifest = Manifest {
            kind: self.kind,
            members,
            provenance_affine: self.provenance.as_ref().map(|a| a.to_row_major().to_vec()),
        };
        let path = dir.join("atlas.json");
        std::fs::write(&path, serde_json::to_string_pretty(&manifest)?).map_err(|e| Error::io(&path, e))
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let path = dir.join("atlas.json");
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let manifest: Manifest = serde_json::from_str(&text)?;
        let file = |name: &str| manifest.members.get(name).map(|f| dir.join(f));
        let need = |name: &str| file(name).ok_or_else(|| Error::Format(format!("atlas manifest lacks `{name}`")));
        let bundle = AtlasBundle {
            kind: manifest.kind,
            template: nifti::load_nifti(need("template")?)?,
            wm_prob: nifti::load_nifti(need("wm_prob")?)?,
            gm_prob: nifti::load_nifti(need("gm_prob")?)?,
            brain_mask: nifti::load_mask(need("brain_mask")?)?,
            cerebellum_mask: file("cerebellum_mask").map(nifti::load_mask).transpose()?,
            stem_mask: file("stem_mask").map(nifti::load_mask).transpose()?,
            label_map: file("label_map").map(nifti::load_labels).transpose()?,
            provenance: manifest
                .provenance_affine
                .map(|v| AffineTransform::from_row_major(&v))
                .transpose()?,
        };
        bundle.validate()?;
        Ok(bundle)
    }
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    kind: AtlasKind,
    members: BTreeMap<String, String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    provenance_affine: Option<Vec<f64>>,
}

/// Both atlases used by the pipeline.
#[derive(Clone, Debug)]
pub struct AtlasPair<T> {
    pub whole_brain: AtlasBundle<T>,
    pub cerebellum: AtlasBundle<T>,
}

impl<T: Real> AtlasPair<T> {
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        self.whole_brain.save(dir.join("whole_brain"))?;
        self.cerebellum.save(dir.join("cerebellum"))
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let whole_brain = AtlasBundle::load(dir.join("whole_brain"))?;
        let cerebellum = AtlasBundle::load(dir.join("cerebellum"))?;
        if whole_brain.kind != AtlasKind::WholeBrain || cerebellum.kind != AtlasKind::Cerebellum {
            return Err(Error::Format("atlas directory holds bundles of the wrong kind".into()));
        }
        Ok(AtlasPair { whole_brain, cerebellum })
    }
}

/// Options for [`prepare_whole_brain_atlas`].
#[derive(Clone, Debug, Default)]
pub struct WholeBrainOptions<T> {
    /// Externally supplied tissue probability maps (used as given).
    pub probabilities: Option<(Volume<T>, Volume<T>)>,
    /// Smoothing of the thresholded tissue indicators, mm.
    pub prob_sigma_mm: Option<f64>,
}

/// Whole-brain bundle from a template and a zone label volume. The brain
/// mask is every non-zero label; WM/GM maps come from a three-class Otsu
/// split of the masked template unless supplied.
pub fn prepare_whole_brain_atlas<T: Real>(
    template: &Volume<T>,
    tissue_labels: &LabelVolume,
    cerebellum_label_set: &[u16],
    options: &WholeBrainOptions<T>,
) -> Result<AtlasBundle<T>> {
    template.geometry().check_same(tissue_labels.geometry())?;
    if cerebellum_label_set.is_empty() {
        return Err(Error::Config("cerebellum label set is empty".into()));
    }
    let present = tissue_labels.labels();
    if !cerebellum_label_set.iter().any(|l| present.contains(l)) {
        return Err(Error::Config(format!(
            "none of the cerebellum labels {cerebellum_label_set:?} occur in the label volume"
        )));
    }
    let cerebellum_mask = tissue_labels.mask_of_any(cerebellum_label_set);
    let brain_mask = Mask::new(
        template.geometry().clone(),
        tissue_labels.data().iter().map(|&l| l != 0).collect(),
    )?;
    let brain = template.masked(&brain_mask)?;
    let (wm_prob, gm_prob) = match &options.probabilities {
        Some((w, g)) => {
            template.geometry().check_same(w.geometry())?;
            template.geometry().check_same(g.geometry())?;
            (w.clone(), g.clone())
        }
        None => {
            let values = brain.values_in(&brain_mask);
            let (t1, t2) = multi_otsu_thresholds(&values)
                .ok_or_else(|| Error::Config("template has no intensity spread inside the brain".into()))?;
            let sigma = options.prob_sigma_mm.unwrap_or(2.0);
            let ind = |f: &dyn Fn(f64) -> bool| {
                let v = Volume::new(
                    template.geometry().clone(),
                    brain
                        .data()
                        .iter()
                        .zip(brain_mask.data())
                        .map(|(x, &m)| if m && f(x.as_f64()) { T::one() } else { T::zero() })
                        .collect(),
                )?;
                if sigma > 0.0 {
                    gaussian_smooth(&v, sigma)
                } else {
                    Ok(v)
                }
            };
            (ind(&|x| x > t2)?, ind(&|x| x > t1 && x <= t2)?)
        }
    };
    let clamp = |v: Volume<T>| v.map(|x| x.max(T::zero()).min(T::one()));
    let bundle = AtlasBundle {
        kind: AtlasKind::WholeBrain,
        template: brain,
        wm_prob: clamp(wm_prob),
        gm_prob: clamp(gm_prob),
        brain_mask,
        cerebellum_mask: Some(cerebellum_mask),
        stem_mask: None,
        label_map: None,
        provenance: None,
    };
    bundle.validate()?;
    Ok(bundle)
}

/// Cerebellum bundle: segments the template itself (priors from an Otsu
/// split of its foreground) and labels WM 1, GM 2, stem 3.
pub fn prepare_cerebellum_atlas<T: Real>(
    template: &Volume<T>,
    stem_mask: &Mask,
    config: &SegmentationConfig,
) -> Result<AtlasBundle<T>> {
    let geom = template.geometry();
    geom.check_same(stem_mask.geometry())?;
    let foreground = template.threshold(T::zero());
    if foreground.is_empty() {
        return Err(Error::Config("cerebellum template has no foreground".into()));
    }
    let values = template.values_in(&foreground);
    let t = otsu_threshold(&values).ok_or_else(|| Error::Config("cerebellum template has no contrast".into()))?;
    let prior = |wm: bool| -> Result<Volume<T>> {
        let v = Volume::new(
            geom.clone(),
            template
                .data()
                .iter()
                .zip(foreground.data())
                .map(|(x, &f)| {
                    let hit = f && ((x.as_f64() > t) == wm);
                    T::lit(if hit { 0.9 } else { 0.05 })
                })
                .collect(),
        )?;
        gaussian_smooth(&v, geom.spacing()[0])
    };
    let seg = segment_tissues(template, &foreground, &prior(true)?, &prior(false)?, config)?;
    let mut labels = LabelVolume::zeros(geom.clone());
    for i in 0..geom.len() {
        labels.data_mut()[i] = if stem_mask.data()[i] {
            label::STEM
        } else if seg.wm_mask.data()[i] {
            label::WM
        } else if seg.gm_mask.data()[i] {
            label::GM
        } else {
            label::BACKGROUND
        };
    }
    let bundle = AtlasBundle {
        kind: AtlasKind::Cerebellum,
        template: template.clone(),
        wm_prob: seg.wm_posterior,
        gm_prob: seg.gm_posterior,
        brain_mask: foreground,
        cerebellum_mask: None,
        stem_mask: Some(stem_mask.clone()),
        label_map: Some(labels),
        provenance: None,
    };
    bundle.validate()?;
    Ok(bundle)
}

/// Synthetic whole-brain and cerebellum atlases from one phantom anatomy.
/// The cerebellum bundle's provenance maps its frame into the whole-brain
/// frame. The fourth ventricle is background in the cerebellum template.
pub fn generate_synthetic_atlas_pair<T: Real>(params: &PhantomParams, seed: u64) -> Result<AtlasPair<T>> {
    params.validate()?;
    let jitter = SubjectJitter::default();
    let head = generate_phantom_on::<T>(params, &jitter, seed, &params.geometry(), params.template_noise_sigma)?;
    let whole_brain = prepare_whole_brain_atlas(
        &head.t1,
        &head.zones,
        &zone::CEREBELLUM,
        &WholeBrainOptions {
            probabilities: None,
            prob_sigma_mm: Some(params.prob_sigma_mm),
        },
    )?;

    let cgeom = params.cerebellum_geometry();
    let provenance = params.provenance();
    let shifted = generate_phantom_on::<T>(
        params,
        &SubjectJitter {
            translation: [0.0; 3],
            ..jitter
        },
        seed ^ 0x5eed_cb,
        &cgeom_in_whole_brain(&cgeom, &provenance)?,
        params.template_noise_sigma,
    )?;
    let keep = |r: u16| r == Region::CerebellumWm.code() || r == Region::CerebellumGm.code() || r == Region::Stem.code();
    let data: Vec<T> = shifted
        .t1
        .data()
        .iter()
        .zip(shifted.regions.data())
        .map(|(&v, &r)| if keep(r) { v } else { T::zero() })
        .collect();
    let template = Volume::new(cgeom.clone(), data)?;
    let stem = Mask::new(
        cgeom.clone(),
        shifted.regions.data().iter().map(|&r| r == Region::Stem.code()).collect(),
    )?;
    let mut cerebellum = prepare_cerebellum_atlas(
        &template,
        &stem,
        &SegmentationConfig {
            seed,
            ..Default::default()
        },
    )?;
    cerebellum.provenance = Some(provenance);
    Ok(AtlasPair { whole_brain, cerebellum })
}

/// The cerebellum grid expressed in whole-brain coordinates.
fn cgeom_in_whole_brain(cgeom: &crate::volume::Geometry, provenance: &AffineTransform) -> Result<crate::volume::Geometry> {
    crate::volume::Geometry::from_affine(cgeom.dims(), cgeom.spacing(), provenance.matrix() * cgeom.voxel_to_world())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume::{dice, resample_mask, Geometry};

    fn labelled() -> (Volume<f32>, LabelVolume) {
        let g = Geometry::new([12, 6, 6], [1.0; 3], [0.0; 3]).unwrap();
        let t = Volume::from_world_fn(g.clone(), |p| 50.0 + 10.0 * p[0] as f32);
        let l = LabelVolume::new(g, (0..432).map(|i| [0u16, 58, 67, 237, 238, 251, 3, 2][(i % 12) * 8 / 12]).collect())
            .unwrap();
        (t, l)
    }

    #[test]
    fn cerebellum_mask_is_union_of_zones() {
        let (t, l) = labelled();
        let b = prepare_whole_brain_atlas(&t, &l, &zone::CEREBELLUM, &Default::default()).unwrap();
        assert_eq!(b.cerebellum_mask.unwrap(), l.mask_of_any(&zone::CEREBELLUM));
    }

    #[test]
    fn absent_labels_are_a_config_error() {
        let (t, l) = labelled();
        let r = prepare_whole_brain_atlas(&t, &l, &[99], &Default::default());
        assert!(matches!(r, Err(Error::Config(_))));
    }

    #[test]
    fn relabelling_commutes() {
        let (t, l) = labelled();
        let perm = |v: u16| if v == 0 { 0 } else { 1000 - v };
        let l2 = LabelVolume::new(l.geometry().clone(), l.data().iter().map(|&v| perm(v)).collect()).unwrap();
        let set2: Vec<u16> = zone::CEREBELLUM.iter().map(|&v| perm(v)).collect();
        let a = prepare_whole_brain_atlas(&t, &l, &zone::CEREBELLUM, &Default::default()).unwrap();
        let b = prepare_whole_brain_atlas(&t, &l2, &set2, &Default::default()).unwrap();
        assert_eq!(a.cerebellum_mask, b.cerebellum_mask);
    }

    #[test]
    fn synthetic_pair_is_consistent() {
        let p = PhantomParams::default();
        let pair: AtlasPair<f32> = generate_synthetic_atlas_pair(&p, 1).unwrap();
        pair.whole_brain.validate().unwrap();
        pair.cerebellum.validate().unwrap();
        let cb = pair.whole_brain.cerebellum_mask.as_ref().unwrap();
        let vol = cb.volume_mm3();
        assert!((vol / p.cerebellum_volume() - 1.0).abs() < 0.2, "{vol}");
        // the whole-brain cerebellum pulled into the cerebellum frame
        let prov = pair.cerebellum.provenance.clone().unwrap();
        let warped = resample_mask(cb, pair.cerebellum.template.geometry(), &prov).unwrap();
        let cb_tissue = pair.cerebellum.brain_mask.and_not(pair.cerebellum.stem_mask.as_ref().unwrap()).unwrap();
        assert!(dice(&warped, &cb_tissue).unwrap() >= 0.9);
        // ventricle is background in the cerebellum template
        let v = pair.cerebellum.template.geometry().to_voxel([0.0, 24.0, -0.0]);
        let idx = pair.cerebellum.template.geometry().index(v[0] as usize, v[1] as usize, v[2] as usize);
        assert_eq!(pair.cerebellum.template.data()[idx], 0.0);
        let labels = pair.cerebellum.label_map.as_ref().unwrap();
        assert!(labels.mask_of(label::STEM) == *pair.cerebellum.stem_mask.as_ref().unwrap());
    }
}
