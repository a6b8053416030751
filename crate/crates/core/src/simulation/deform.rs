use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::registration::DeformationField;
use crate::volume::{gaussian_smooth_vox, percentile, Geometry};

/// Smoothed white-noise displacement field with 99th-percentile magnitude
/// `magnitude_mm`, halved until every Jacobian determinant is positive.
pub fn random_deformation(grid: &Geometry, magnitude_mm: f64, smoothness_mm: f64, seed: u64) -> DeformationField {
    if !(magnitude_mm > 0.0) {
        return DeformationField::zeros(grid.clone());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = grid.len();
    let sigma = grid.spacing().map(|s| smoothness_mm / s);
    let mut noise: [Vec<f64>; 3] = Default::default();
    for c in &mut noise {
        *c = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
        gaussian_smooth_vox(c, grid.dims(), sigma);
    }
    let mags: Vec<f64> = (0..n)
        .map(|i| (noise[0][i].powi(2) + noise[1][i].powi(2) + noise[2][i].powi(2)).sqrt())
        .collect();
    let p99 = percentile(&mags, 99.0).unwrap_or(0.0);
    if !(p99 > 0.0) {
        return DeformationField::zeros(grid.clone());
    }
    let mut scale = magnitude_mm / p99;
    loop {
        let disp = noise.clone().map(|c| c.into_iter().map(|v| v * scale).collect());
        let field = DeformationField::from_components(grid.clone(), disp).expect("grid-sized components");
        if field.jacobian_determinants().iter().all(|&j| j > 0.0) || scale < 1e-9 {
            return field;
        }
        scale *= 0.5;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid() -> Geometry {
        Geometry::centered([40, 40, 40], [2.0; 3], [0.0; 3]).unwrap()
    }

    #[test]
    fn zero_magnitude_is_zero_field() {
        assert_eq!(random_deformation(&grid(), 0.0, 10.0, 1).max_magnitude(), 0.0);
    }

    #[test]
    fn typical_field_is_bounded_and_diffeomorphic() {
        let f = random_deformation(&grid(), 3.0, 10.0, 5);
        assert!(f.max_magnitude() <= 4.5, "{}", f.max_magnitude());
        let p99 = percentile(&f.magnitudes(), 99.0).unwrap();
        assert!((p99 - 3.0).abs() < 1e-6 || p99 < 3.0);
        assert!(f.jacobian_determinants().iter().all(|&j| j > 0.0));
    }

    #[test]
    fn rough_field_is_scaled_down() {
        let f = random_deformation(&grid(), 6.0, 2.0, 5);
        assert!(f.jacobian_determinants().iter().all(|&j| j > 0.0));
    }

    #[test]
    fn seeded() {
        let a = random_deformation(&grid(), 3.0, 10.0, 9);
        let b = random_deformation(&grid(), 3.0, 10.0, 9);
        let c = random_deformation(&grid(), 3.0, 10.0, 10);
        assert_eq!(a.components(), b.components());
        assert_ne!(a.components(), c.components());
    }
}
