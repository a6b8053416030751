use std::sync::OnceLock;

use proptest::prelude::*;

use cbdetect::atlas::{generate_synthetic_atlas_pair, label, AtlasPair, PhantomParams};
use cbdetect::pipeline::{detect_damage, detection_threshold, DetectionParams};
use cbdetect::volume::{connected_components, Connectivity};
use cbdetect::Image;

fn atlases() -> &'static AtlasPair<f32> {
    static PAIR: OnceLock<AtlasPair<f32>> = OnceLock::new();
    PAIR.get_or_init(|| generate_synthetic_atlas_pair(&PhantomParams::default(), 0).unwrap())
}

/// Template with up to three balls scaled by `keep` (0 removes tissue).
fn erased(balls: &[([f64; 3], f64, f32)]) -> Image {
    let cb = &atlases().cerebellum;
    let g = cb.template.geometry().clone();
    let mut out = cb.template.clone();
    for (idx, v) in out.data_mut().iter_mut().enumerate() {
        let p = g.index_to_world(idx);
        for &(c, r, keep) in balls {
            let d2 = (p[0] - c[0]).powi(2) + (p[1] - c[1]).powi(2) + (p[2] - c[2]).powi(2);
            if d2 < r * r {
                *v *= keep;
            }
        }
    }
    out
}

fn ball() -> impl Strategy<Value = ([f64; 3], f64, f32)> {
    ([-40.0f64..40.0, -24.0..24.0, -20.0..20.0], 2.0f64..14.0, prop_oneof![Just(0.0f32), 0.0f32..1.0])
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn damage_obeys_the_subtraction(balls in prop::collection::vec(ball(), 0..4), six in any::<bool>()) {
        let cb = &atlases().cerebellum;
        let params = DetectionParams {
            connectivity: if six { Connectivity::Six } else { Connectivity::TwentySix },
            ..DetectionParams::default()
        };
        let normalized = erased(&balls);
        let report = detect_damage(&normalized, cb, &params).unwrap();
        let t = detection_threshold(cb, &params) as f32;
        let template_bin = cb.template.threshold(t).and_not(&cb.label_map.as_ref().unwrap().mask_of(label::STEM)).unwrap();
        let normalized_bin = normalized.threshold(t);
        prop_assert!(report.damage_mask.is_subset_of(&template_bin));
        prop_assert_eq!(report.damage_mask.intersection_count(&normalized_bin), 0);
        prop_assert!(connected_components(&report.damage_mask, params.connectivity).1 <= 1);
        let expected = report.damage_mask.count() as f64 * cb.template.geometry().voxel_volume();
        prop_assert!((report.volume_mm3 - expected).abs() <= 1e-9 * expected.max(1.0));
        prop_assert_eq!(report.centroid_mm.is_some(), !report.damage_mask.is_empty());
    }
}

#[test]
fn detection_is_deterministic() {
    let cb = &atlases().cerebellum;
    let n = erased(&[([20.0, 0.0, 0.0], 9.0, 0.0)]);
    let a = detect_damage(&n, cb, &DetectionParams::default()).unwrap();
    let b = detect_damage(&n, cb, &DetectionParams::default()).unwrap();
    assert_eq!(a.damage_mask, b.damage_mask);
    assert!(a.volume_mm3 > 0.0);
}

#[test]
fn stem_loss_is_not_damage() {
    let cb = &atlases().cerebellum;
    let stem = cb.label_map.as_ref().unwrap().mask_of(label::STEM);
    assert!(stem.count() > 0);
    let mut n = cb.template.clone();
    for (v, &s) in n.data_mut().iter_mut().zip(stem.data()) {
        if s {
            *v = 0.0;
        }
    }
    assert_eq!(detect_damage(&n, cb, &DetectionParams::default()).unwrap().volume_mm3, 0.0);
}
