use super::Volume;
use crate::error::{Error, Result};
use crate::scalar::Real;

/// Truncation radius of the sampled Gaussian, in standard deviations.
const TRUNCATE: f64 = 4.0;

/// Normalised sampled Gaussian of standard deviation `sigma` (voxels),
/// truncated at `ceil(4 sigma)` taps each side.
pub fn smoothing_kernel(sigma: f64) -> Vec<f64> {
    let radius = (TRUNCATE * sigma).ceil().max(1.0) as usize;
    let mut k: Vec<f64> = (0..=2 * radius)
        .map(|i| {
            let x = i as f64 - radius as f64;
            (-0.5 * x * x / (sigma * sigma)).exp()
        })
        .collect();
    let s: f64 = k.iter().sum();
    k.iter_mut().for_each(|w| *w /= s);
    k
}

/// Separable Gaussian smoothing with `sigma_mm`, converted per axis to voxels.
pub fn gaussian_smooth<T: Real>(vol: &Volume<T>, sigma_mm: f64) -> Result<Volume<T>> {
    if !(sigma_mm > 0.0 && sigma_mm.is_finite()) {
        return Err(Error::Config(format!("smoothing sigma must be positive, got {sigma_mm}")));
    }
    let spacing = vol.geometry().spacing();
    let mut out = vol.clone();
    let dims = out.dims();
    gaussian_smooth_vox(out.data_mut(), dims, spacing.map(|s| sigma_mm / s));
    Ok(out)
}

/// In-place separable smoothing with per-axis sigma in voxels. A sigma of
/// zero leaves that axis untouched. Taps falling outside the grid are dropped
/// and the remaining weights renormalised.
pub fn gaussian_smooth_vox<T: Real>(data: &mut [T], dims: [usize; 3], sigma_vox: [f64; 3]) {
    let mut line = Vec::new();
    let mut out = Vec::new();
    for axis in 0..3 {
        let sigma = sigma_vox[axis];
        let n = dims[axis];
        if sigma <= 0.0 || n < 2 {
            continue;
        }
        let kernel: Vec<T> = smoothing_kernel(sigma).into_iter().map(T::lit).collect();
        let stride = match axis {
            0 => 1,
            1 => dims[0],
            _ => dims[0] * dims[1],
        };
        let (outer_a, outer_b) = match axis {
            0 => (dims[1], dims[2]),
            1 => (dims[0], dims[2]),
            _ => (dims[0], dims[1]),
        };
        line.resize(n, T::zero());
        out.resize(n, T::zero());
        for b in 0..outer_b {
            for a in 0..outer_a {
                let start = match axis {
                    0 => dims[0] * (a + dims[1] * b),
                    1 => a + dims[0] * dims[1] * b,
                    _ => a + dims[0] * b,
                };
                for (i, l) in line.iter_mut().enumerate() {
                    *l = data[start + i * stride];
                }
                convolve_line(&line, &kernel, &mut out);
                for (i, &o) in out.iter().enumerate() {
                    data[start + i * stride] = o;
                }
            }
        }
    }
}

fn convolve_line<T: Real>(line: &[T], kernel: &[T], out: &mut [T]) {
    let n = line.len() as isize;
    let r = (kernel.len() / 2) as isize;
    for i in 0..n {
        let lo = (i - r).max(0);
        let hi = (i + r).min(n - 1);
        let interior = lo == i - r && hi == i + r;
        let mut acc = T::zero();
        if interior {
            let src = &line[(i - r) as usize..=(i + r) as usize];
            for (w, &v) in kernel.iter().zip(src) {
                acc += *w * v;
            }
        } else {
            let mut wsum = T::zero();
            for j in lo..=hi {
                let w = kernel[(j - i + r) as usize];
                acc += w * line[j as usize];
                wsum += w;
            }
            acc /= wsum;
        }
        out[i as usize] = acc;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume::Geometry;

    #[test]
    fn constant_is_preserved() {
        let g = Geometry::new([9, 7, 5], [1.0, 2.0, 0.5], [0.0; 3]).unwrap();
        let v = Volume::<f64>::filled(g, 42.0);
        let s = gaussian_smooth(&v, 1.7).unwrap();
        assert!(s.data().iter().all(|&x| (x - 42.0).abs() < 1e-6));
    }

    #[test]
    fn rejects_nonpositive_sigma() {
        let g = Geometry::new([3, 3, 3], [1.0; 3], [0.0; 3]).unwrap();
        let v = Volume::<f32>::zeros(g);
        assert!(gaussian_smooth(&v, 0.0).is_err());
        assert!(gaussian_smooth(&v, -1.0).is_err());
    }

    #[test]
    fn kernel_is_normalised_and_symmetric() {
        let k = smoothing_kernel(2.3);
        assert!((k.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        for i in 0..k.len() / 2 {
            assert_eq!(k[i], k[k.len() - 1 - i]);
        }
    }
}
