use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use cbdetect::tissue::{mcd_filter, segment_tissues, SegmentationConfig};
use cbdetect::volume::gaussian_smooth;
use cbdetect::{Geometry, Image, Mask};

fn head(seed: u64) -> (Image, Mask, Image, Image) {
    let g = Geometry::centered([36, 36, 36], [2.0; 3], [0.0; 3]).unwrap();
    let r = |p: [f64; 3]| (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, 5.0).unwrap();
    let img = Image::from_world_fn(g.clone(), |p| {
        let base = match r(p) {
            d if d < 16.0 => 120.0,
            d if d < 26.0 => 90.0,
            d if d < 32.0 => 30.0,
            _ => 0.0,
        };
        (base + noise.sample(&mut rng)) as f32
    });
    let brain = Mask::from_world_fn(g.clone(), |p| r(p) < 32.0);
    let wm = Image::from_world_fn(g.clone(), |p| if r(p) < 16.0 { 0.9 } else { 0.05 });
    let gm = Image::from_world_fn(g, |p| if (16.0..26.0).contains(&r(p)) { 0.9 } else { 0.05 });
    (img, brain, gaussian_smooth(&wm, 3.0).unwrap(), gaussian_smooth(&gm, 3.0).unwrap())
}

#[test]
fn posteriors_partition_the_brain() {
    let (img, brain, wm, gm) = head(1);
    let seg = segment_tissues(&img, &brain, &wm, &gm, &SegmentationConfig::default()).unwrap();
    for post in [&seg.wm_posterior, &seg.gm_posterior, &seg.other_posterior] {
        assert!(post.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
    }
    for (i, &inside) in brain.data().iter().enumerate() {
        if inside {
            let s = seg.wm_posterior.data()[i] as f64 + seg.gm_posterior.data()[i] as f64 + seg.other_posterior.data()[i] as f64;
            assert!((s - 1.0).abs() < 1e-6);
        }
    }
    assert_eq!(seg.wm_mask.intersection_count(&seg.gm_mask), 0);
    assert_eq!(seg.wm_mask.or(&seg.gm_mask).unwrap().or(&seg.other_mask).unwrap(), brain);
    assert_eq!(seg.audit.iterations.len(), 3);
}

#[test]
fn segmentation_is_deterministic_given_seed() {
    let (img, brain, wm, gm) = head(2);
    let cfg = SegmentationConfig { seed: 9, ..SegmentationConfig::default() };
    let a = segment_tissues(&img, &brain, &wm, &gm, &cfg).unwrap();
    let b = segment_tissues(&img, &brain, &wm, &gm, &cfg).unwrap();
    assert_eq!(a.wm_posterior.data(), b.wm_posterior.data());
    assert_eq!(a.gm_mask, b.gm_mask);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn mcd_mean_resists_gross_outliers(seed in any::<u64>(), frac in 0.0f64..=0.2) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let wm = Normal::new(120.0, 5.0).unwrap();
        let n = 2000;
        let clean: Vec<f64> = (0..n).map(|_| wm.sample(&mut rng)).collect();
        let k = (frac * n as f64) as usize;
        let mut dirty = clean.clone();
        for v in dirty.iter_mut().take(k) {
            *v = 1200.0;
        }
        let a = mcd_filter(&clean, 0.5).unwrap().raw_mean;
        let b = mcd_filter(&dirty, 0.5).unwrap().raw_mean;
        prop_assert!((a - b).abs() / a < 0.02, "clean {a}, contaminated {b}");
    }
}
