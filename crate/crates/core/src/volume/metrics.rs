use super::Mask;
use crate::error::Result;

/// Sørensen–Dice overlap `2|A∩B| / (|A|+|B|)`. Two empty masks score 1.
pub fn dice(a: &Mask, b: &Mask) -> Result<f64> {
    a.geometry().check_same(b.geometry())?;
    let (na, nb) = (a.count(), b.count());
    if na + nb == 0 {
        return Ok(1.0);
    }
    let inter = a.intersection_count(b);
    Ok(2.0 * inter as f64 / (na + nb) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume::Geometry;

    fn grid() -> Geometry {
        Geometry::new([10, 10, 10], [1.0; 3], [0.0; 3]).unwrap()
    }

    #[test]
    fn tabulated_cases() {
        let a = Mask::from_world_fn(grid(), |p| p[2] < 1.0);
        assert_eq!(dice(&a, &a).unwrap(), 1.0);
        let b = Mask::from_world_fn(grid(), |p| p[2] > 5.0);
        assert_eq!(dice(&a, &b).unwrap(), 0.0);
        // |a| = 100, |c| = 150, |a ∩ c| = 75
        let c = Mask::from_world_fn(grid(), |p| {
            p[2] < 2.0 && p[1] * 10.0 + p[0] < 75.0
        });
        assert_eq!((a.count(), c.count(), a.intersection_count(&c)), (100, 150, 75));
        assert!((dice(&a, &c).unwrap() - 0.6).abs() < 1e-12);
    }

    #[test]
    fn empty_conventions_and_mismatch() {
        let e = Mask::empty(grid());
        let a = Mask::from_world_fn(grid(), |p| p[0] < 1.0);
        assert_eq!(dice(&e, &e).unwrap(), 1.0);
        assert_eq!(dice(&e, &a).unwrap(), 0.0);
        let other = Mask::empty(Geometry::new([10, 10, 9], [1.0; 3], [0.0; 3]).unwrap());
        assert!(dice(&a, &other).is_err());
    }
}
