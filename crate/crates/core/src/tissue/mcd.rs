use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Squared-distance cutoff: chi-square 97.5th percentile with one dof.
pub const MCD_CUTOFF: f64 = 5.024;

/// Median of the chi-square distribution with one dof, used to make the
/// raw MCD variance consistent at the normal model.
const CHI2_1_MEDIAN: f64 = 0.454_936_423_119_572_7;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct McdEstimate {
    /// Mean and (population) variance of the minimum-variance subset.
    pub raw_mean: f64,
    pub raw_variance: f64,
    /// Raw variance rescaled for consistency; used for the cutoff.
    pub variance: f64,
    pub subset_size: usize,
    pub inliers: Vec<f64>,
}

/// Exact 1D minimum covariance determinant: the best size-`h` subset is a
/// contiguous window of the sorted samples.
pub fn mcd_filter(samples: &[f64], support_fraction: f64) -> Result<McdEstimate> {
    let n = samples.len();
    if n < 4 {
        return Err(Error::InsufficientSamples { needed: 4, got: n });
    }
    if !(0.5..1.0).contains(&support_fraction) {
        return Err(Error::Config(format!("support fraction must lie in [0.5, 1), got {support_fraction}")));
    }
    let h = ((support_fraction * n as f64).ceil() as usize).clamp(1, n);
    let mut x = samples.to_vec();
    x.sort_by(f64::total_cmp);

    // sliding sums on shifted values to limit cancellation
    let shift = x[n / 2];
    let mut s1 = 0.0;
    let mut s2 = 0.0;
    for &v in &x[..h] {
        s1 += v - shift;
        s2 += (v - shift) * (v - shift);
    }
    let hf = h as f64;
    let mut best = (0usize, s2 - s1 * s1 / hf);
    for start in 1..=n - h {
        let out = x[start - 1] - shift;
        let inn = x[start + h - 1] - shift;
        s1 += inn - out;
        s2 += inn * inn - out * out;
        let ss = s2 - s1 * s1 / hf;
        if ss < best.1 {
            best = (start, ss);
        }
    }
    let window = &x[best.0..best.0 + h];
    let (raw_mean, raw_variance) = mean_var(window);

    let variance = if raw_variance > 0.0 {
        let mut d2: Vec<f64> = x.iter().map(|v| (v - raw_mean).powi(2) / raw_variance).collect();
        d2.sort_by(f64::total_cmp);
        let med = if n % 2 == 1 { d2[n / 2] } else { 0.5 * (d2[n / 2 - 1] + d2[n / 2]) };
        raw_variance * med / CHI2_1_MEDIAN
    } else {
        0.0
    };
    let inliers = samples
        .iter()
        .copied()
        .filter(|&v| {
            let d = v - raw_mean;
            if variance > 0.0 {
                d * d / variance <= MCD_CUTOFF
            } else {
                d == 0.0
            }
        })
        .collect();
    Ok(McdEstimate {
        raw_mean,
        raw_variance,
        variance,
        subset_size: h,
        inliers,
    })
}

/// Two-pass mean and population variance.
pub(crate) fn mean_var(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Exhaustive search over all size-h subsets.
    fn brute_force(x: &[f64], h: usize) -> (f64, f64) {
        let n = x.len();
        let mut best: Option<(f64, f64)> = None;
        for bits in 0u32..(1 << n) {
            if bits.count_ones() as usize != h {
                continue;
            }
            let sub: Vec<f64> = (0..n).filter(|i| bits >> i & 1 == 1).map(|i| x[i]).collect();
            let (m, v) = mean_var(&sub);
            if best.is_none_or(|b| v < b.1) {
                best = Some((m, v));
            }
        }
        best.unwrap()
    }

    #[test]
    fn gross_outlier_is_excluded() {
        let s = [0.9, 0.95, 1.0, 1.05, 1.1, 10.0];
        let est = mcd_filter(&s, 0.5).unwrap();
        let (m, v) = brute_force(&s, 3);
        assert!((est.raw_mean - m).abs() < 1e-12 && (est.raw_variance - v).abs() < 1e-12);
        assert!(!est.inliers.contains(&10.0));
        assert_eq!(est.inliers.len(), 5);
    }

    #[test]
    fn identical_samples_are_all_kept() {
        let est = mcd_filter(&[4.0; 9], 0.5).unwrap();
        assert_eq!(est.inliers.len(), 9);
        assert_eq!(est.raw_variance, 0.0);
    }

    #[test]
    fn too_few_samples() {
        assert!(matches!(
            mcd_filter(&[1.0, 2.0, 3.0], 0.5),
            Err(Error::InsufficientSamples { needed: 4, got: 3 })
        ));
    }

    proptest! {
        #[test]
        fn matches_exhaustive_subsets(x in prop::collection::vec(-50.0f64..50.0, 4..=12)) {
            let est = mcd_filter(&x, 0.5).unwrap();
            let (m, v) = brute_force(&x, est.subset_size);
            prop_assert!((est.raw_mean - m).abs() <= 1e-9 * (1.0 + m.abs()));
            prop_assert!((est.raw_variance - v).abs() <= 1e-9 * (1.0 + v));
        }
    }
}
