use proptest::prelude::*;

use cbdetect::volume::{
    connected_components, dice, gaussian_smooth, largest_component, morphology, nifti, resample, Connectivity,
    Identity, Interpolation, MorphOp,
};
use cbdetect::{Geometry, Image, Mask};

fn geometry() -> impl Strategy<Value = Geometry> {
    (
        [1usize..9, 1usize..9, 1usize..7],
        [1u32..16, 1u32..16, 1u32..16],
        [-400i32..400, -400i32..400, -400i32..400],
    )
        .prop_map(|(dims, sp, org)| {
            // quarter-millimetre values survive the single-precision header
            Geometry::new(dims, sp.map(|s| s as f64 * 0.25), org.map(|o| o as f64 * 0.25)).unwrap()
        })
}

fn mask_on(geom: Geometry) -> impl Strategy<Value = Mask> {
    prop::collection::vec(any::<bool>(), geom.len()).prop_map(move |d| Mask::new(geom.clone(), d).unwrap())
}

fn cube_mask() -> impl Strategy<Value = Mask> {
    (0.05f64..0.7, any::<u64>()).prop_map(|(p, seed)| {
        let g = Geometry::centered([10, 10, 10], [1.0; 3], [0.0; 3]).unwrap();
        let mut state = seed | 1;
        let data = (0..g.len())
            .map(|_| {
                state ^= state << 13;
                state ^= state >> 7;
                state ^= state << 17;
                (state % 1000) as f64 / 1000.0 < p
            })
            .collect();
        Mask::new(g, data).unwrap()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn float32_round_trip_is_bit_exact(geom in geometry(), seed in any::<u64>()) {
        let mut state = seed | 1;
        let data: Vec<f32> = (0..geom.len()).map(|_| {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            f32::from_bits((state >> 32) as u32 & 0x7f7f_ffff | ((state as u32) & 0x8000_0000))
        }).collect();
        let vol = Image::new(geom, data).unwrap();
        let dir = tempfile::tempdir().unwrap();
        for name in ["v.nii", "v.nii.gz"] {
            let path = dir.path().join(name);
            nifti::save_nifti(&vol, &path).unwrap();
            let back: Image = nifti::load_nifti(&path).unwrap();
            prop_assert_eq!(back.geometry(), vol.geometry());
            prop_assert!(back.data().iter().zip(vol.data()).all(|(a, b)| a.to_bits() == b.to_bits()));
        }
    }

    #[test]
    fn dice_is_symmetric_and_bounded((a, b) in geometry().prop_flat_map(|g| (mask_on(g.clone()), mask_on(g)))) {
        let ab = dice(&a, &b).unwrap();
        prop_assert_eq!(ab, dice(&b, &a).unwrap());
        prop_assert!((0.0..=1.0).contains(&ab));
    }

    #[test]
    fn components_label_every_foreground_voxel(m in cube_mask(), six in any::<bool>()) {
        let conn = if six { Connectivity::Six } else { Connectivity::TwentySix };
        let (labels, n) = connected_components(&m, conn);
        for (&fg, &l) in m.data().iter().zip(labels.data()) {
            prop_assert_eq!(fg, l > 0);
            prop_assert!(l as usize <= n);
        }
        let largest = largest_component(&m, conn);
        prop_assert!(largest.is_subset_of(&m));
        prop_assert!(connected_components(&largest, conn).1 <= 1);
    }

    #[test]
    fn smoothing_keeps_constants(value in -1e4f32..1e4, sigma in 0.3f64..6.0) {
        let g = Geometry::centered([9, 7, 5], [1.5, 1.0, 2.0], [0.0; 3]).unwrap();
        let v = Image::filled(g, value);
        let s = gaussian_smooth(&v, sigma).unwrap();
        let tol = 1e-6 * (1.0 + value.abs() as f64);
        prop_assert!(s.data().iter().all(|&x| ((x - value) as f64).abs() < tol.max(1e-6)));
    }

    #[test]
    fn identity_resample_is_identity(geom in geometry(), seed in any::<u32>()) {
        let data: Vec<f32> = (0..geom.len()).map(|i| ((i as u32).wrapping_mul(2654435761) ^ seed) as f32).collect();
        let v = Image::new(geom.clone(), data).unwrap();
        for interp in [Interpolation::Linear, Interpolation::Nearest] {
            let r = resample(&v, &geom, &Identity, interp).unwrap();
            prop_assert_eq!(r.data(), v.data());
        }
    }

    #[test]
    fn closing_and_opening_are_ordered_and_idempotent(m in cube_mask(), radius in 1usize..3) {
        let closed = morphology(&m, MorphOp::Close, radius);
        let opened = morphology(&m, MorphOp::Open, radius);
        prop_assert!(m.is_subset_of(&closed));
        prop_assert!(opened.is_subset_of(&m));
        prop_assert_eq!(morphology(&closed, MorphOp::Close, radius), closed);
        prop_assert_eq!(morphology(&opened, MorphOp::Open, radius), opened);
    }
}
