use std::collections::HashSet;
use std::sync::OnceLock;

use statrs::distribution::{ContinuousCDF, Normal};

use cbdetect::atlas::{generate_phantom, generate_synthetic_atlas_pair, AtlasPair, SubjectJitter};
use cbdetect::pipeline::{run_pipeline_on, PipelineConfig, PipelineOutput};
use cbdetect::simulation::{
    map_atlas_to_healthy, random_deformation, sample_damage_voi, simulate_case, AtlasMapping, DamageKind,
    SimulationSpec,
};
use cbdetect::volume::resample_mask;
use cbdetect::Geometry;

fn atlases() -> &'static AtlasPair<f32> {
    static PAIR: OnceLock<AtlasPair<f32>> = OnceLock::new();
    PAIR.get_or_init(|| generate_synthetic_atlas_pair(&SimulationSpec::default().phantom, 0).unwrap())
}

fn healthy() -> &'static (PipelineOutput<f32>, AtlasMapping<f32>) {
    static RUN: OnceLock<(PipelineOutput<f32>, AtlasMapping<f32>)> = OnceLock::new();
    RUN.get_or_init(|| {
        let spec = SimulationSpec::default();
        let config = PipelineConfig::default();
        let cb = &atlases().cerebellum;
        let ph = generate_phantom::<f32>(&spec.phantom, &SubjectJitter::random(31), 31).unwrap();
        let out = run_pipeline_on(&ph.t1, atlases(), &config, None).unwrap();
        let init = cb.provenance.as_ref().map(|p| out.isolation.affine.inverse().then_after(p));
        let m = map_atlas_to_healthy(
            &out.isolation.cerebellum,
            &out.isolation.mask,
            &out.segmentation,
            cb,
            &config.normalization,
            init.as_ref(),
            spec.quality_gate,
        )
        .unwrap();
        (out, m)
    })
}

#[test]
fn distinct_seeds_give_distinct_vois() {
    let spec = SimulationSpec::default();
    let cb = &atlases().cerebellum;
    let mut seen = HashSet::new();
    for seed in 0..100u64 {
        let kind = if seed % 2 == 0 { DamageKind::Lateral } else { DamageKind::Ventricular };
        let voi = sample_damage_voi(kind, 2000.0, cb, &spec.voi, seed).unwrap();
        assert!(seen.insert(voi.data().to_vec()), "seed {seed} repeated an earlier VOI");
        let again = sample_damage_voi(kind, 2000.0, cb, &spec.voi, seed).unwrap();
        assert_eq!(voi, again);
        let v = voi.volume_mm3();
        assert!((1500.0..=2500.0).contains(&v), "volume {v}");
    }
}

#[test]
fn random_deformations_are_diffeomorphic() {
    let g = Geometry::centered([40, 36, 32], [2.0; 3], [0.0; 3]).unwrap();
    for seed in 0..8 {
        let f = random_deformation(&g, 3.0, 10.0, seed);
        assert!(f.jacobian_determinants().iter().all(|&j| j > 0.0), "seed {seed}");
        assert!(f.max_magnitude() > 0.0);
    }
}

#[test]
fn native_gt_follows_the_maps() {
    let spec = SimulationSpec::default();
    let cb = &atlases().cerebellum;
    let (h, m) = healthy();
    for (i, kind) in [DamageKind::Lateral, DamageKind::Ventricular].into_iter().enumerate() {
        let voi = sample_damage_voi(kind, 4000.0, cb, &spec.voi, 70 + i as u64).unwrap();
        let case = simulate_case(&h.cropped, &h.segmentation, &m.atlas_to_native, &voi, kind, 4000.0, &spec, 80 + i as u64)
            .unwrap();
        let geom = h.cropped.geometry();
        let pre = resample_mask(&voi, geom, &m.atlas_to_native).unwrap();
        let expected = resample_mask(&pre, geom, &case.injection.deformation).unwrap();
        assert_eq!(case.gt_voi_native, expected);
    }
}

#[test]
fn injected_intensities_pass_ks() {
    let spec = SimulationSpec::default();
    let cb = &atlases().cerebellum;
    let (h, m) = healthy();
    for (i, target) in [3500.0, 9000.0].into_iter().enumerate() {
        let voi = sample_damage_voi(DamageKind::Lateral, target, cb, &spec.voi, 40 + i as u64).unwrap();
        let case = simulate_case(&h.cropped, &h.segmentation, &m.atlas_to_native, &voi, DamageKind::Lateral, target, &spec, 50 + i as u64)
            .unwrap();
        let native = resample_mask(&voi, h.cropped.geometry(), &m.atlas_to_native).unwrap();
        if native.volume_mm3() < 3000.0 {
            continue;
        }
        let mut x: Vec<f64> = case.injection.pre_deformation.values_in(&native).iter().map(|&v| v as f64).collect();
        x.sort_by(f64::total_cmp);
        let dist = Normal::new(case.csf_mu, spec.csf_sigma).unwrap();
        let n = x.len() as f64;
        let d = x
            .iter()
            .enumerate()
            .map(|(k, &v)| {
                let f = dist.cdf(v);
                (f - k as f64 / n).abs().max((k as f64 + 1.0) / n - f)
            })
            .fold(0.0, f64::max);
        // asymptotic 1% critical value
        let critical = 1.628 / n.sqrt();
        assert!(d < critical, "KS D = {d}, critical {critical}, n = {n}");
    }
}
