use super::{Geometry, LabelVolume, Mask, Volume};
use crate::error::Result;
use crate::scalar::Real;

/// Maps a world point of the target space to a world point of the source
/// space (pull-back convention used by every resampler).
pub trait PointMap {
    fn map_point(&self, p: [f64; 3]) -> [f64; 3];
}

/// The identity map.
#[derive(Clone, Copy, Debug, Default)]
pub struct Identity;

impl PointMap for Identity {
    #[inline]
    fn map_point(&self, p: [f64; 3]) -> [f64; 3] {
        p
    }
}

impl<F: Fn([f64; 3]) -> [f64; 3]> PointMap for F {
    #[inline]
    fn map_point(&self, p: [f64; 3]) -> [f64; 3] {
        self(p)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Interpolation {
    Nearest,
    #[default]
    Linear,
}

const EDGE_TOL: f64 = 1e-6;

/// Trilinear sample at continuous voxel coordinates; `None` outside the grid.
#[inline]
pub fn sample_linear<T: Real>(data: &[T], dims: [usize; 3], v: [f64; 3]) -> Option<T> {
    let mut base = [0usize; 3];
    let mut frac = [0.0f64; 3];
    for a in 0..3 {
        let n = dims[a] as f64;
        let x = v[a];
        if !(x >= -EDGE_TOL && x <= n - 1.0 + EDGE_TOL) {
            return None;
        }
        let x = x.clamp(0.0, n - 1.0);
        let f = x.floor();
        let mut b = f as usize;
        let mut t = x - f;
        if b + 1 >= dims[a] {
            // upper edge: fold onto the last cell
            if dims[a] == 1 {
                b = 0;
                t = 0.0;
            } else {
                b = dims[a] - 2;
                t = x - b as f64;
            }
        }
        base[a] = b;
        frac[a] = t;
    }
    Some(trilinear(data, dims, base, frac))
}

#[inline]
fn trilinear<T: Real>(data: &[T], dims: [usize; 3], b: [usize; 3], f: [f64; 3]) -> T {
    let sx = 1;
    let sy = dims[0];
    let sz = dims[0] * dims[1];
    let i0 = b[0] + sy * (b[1] + dims[1] * b[2]);
    let dx = if dims[0] > 1 { sx } else { 0 };
    let dy = if dims[1] > 1 { sy } else { 0 };
    let dz = if dims[2] > 1 { sz } else { 0 };
    let (fx, fy, fz) = (T::lit(f[0]), T::lit(f[1]), T::lit(f[2]));
    let one = T::one();
    let lerp = |a: T, b: T, t: T| if t == T::zero() { a } else { a * (one - t) + b * t };
    let c00 = lerp(data[i0], data[i0 + dx], fx);
    let c10 = lerp(data[i0 + dy], data[i0 + dy + dx], fx);
    let c01 = lerp(data[i0 + dz], data[i0 + dz + dx], fx);
    let c11 = lerp(data[i0 + dz + dy], data[i0 + dz + dy + dx], fx);
    let c0 = lerp(c00, c10, fy);
    let c1 = lerp(c01, c11, fy);
    lerp(c0, c1, fz)
}

/// Nearest-voxel lookup at continuous voxel coordinates; `None` outside.
#[inline]
pub fn sample_nearest<T: Copy>(data: &[T], dims: [usize; 3], v: [f64; 3]) -> Option<T> {
    let mut idx = [0usize; 3];
    for a in 0..3 {
        let r = (v[a] + 0.5).floor();
        if r < 0.0 || r >= dims[a] as f64 {
            return None;
        }
        idx[a] = r as usize;
    }
    Some(data[idx[0] + dims[0] * (idx[1] + dims[1] * idx[2])])
}

/// Resamples `vol` onto `target`; voxels mapping outside the source are 0.
pub fn resample<T: Real>(
    vol: &Volume<T>,
    target: &Geometry,
    map: &dyn PointMap,
    interp: Interpolation,
) -> Result<Volume<T>> {
    let src = vol.geometry();
    let dims = src.dims();
    let data = vol.data();
    let out = (0..target.len())
        .map(|idx| {
            let q = map.map_point(target.index_to_world(idx));
            let v = src.to_voxel(q);
            match interp {
                Interpolation::Linear => sample_linear(data, dims, v),
                Interpolation::Nearest => sample_nearest(data, dims, v),
            }
            .unwrap_or_else(T::zero)
        })
        .collect();
    Ok(Volume::new(target.clone(), out)?.with_dtype(vol.dtype()))
}

/// Nearest-neighbour resampling of a mask.
pub fn resample_mask(mask: &Mask, target: &Geometry, map: &dyn PointMap) -> Result<Mask> {
    let src = mask.geometry();
    let dims = src.dims();
    let data = mask.data();
    let out = (0..target.len())
        .map(|idx| {
            let v = src.to_voxel(map.map_point(target.index_to_world(idx)));
            sample_nearest(data, dims, v).unwrap_or(false)
        })
        .collect();
    Mask::new(target.clone(), out)
}

/// Linear resampling of a mask's indicator followed by a 0.5 threshold.
pub fn resample_mask_linear(mask: &Mask, target: &Geometry, map: &dyn PointMap) -> Result<Mask> {
    let ind: Volume<f32> = mask.to_volume();
    Ok(resample(&ind, target, map, Interpolation::Linear)?.threshold(0.5))
}

pub fn resample_labels(labels: &LabelVolume, target: &Geometry, map: &dyn PointMap) -> Result<LabelVolume> {
    let src = labels.geometry();
    let dims = src.dims();
    let data = labels.data();
    let out = (0..target.len())
        .map(|idx| {
            let v = src.to_voxel(map.map_point(target.index_to_world(idx)));
            sample_nearest(data, dims, v).unwrap_or(0)
        })
        .collect();
    LabelVolume::new(target.clone(), out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp() -> Volume<f64> {
        let g = Geometry::new([6, 5, 4], [2.0, 2.0, 2.0], [0.0; 3]).unwrap();
        Volume::from_world_fn(g, |p| 1.0 + p[0] + 3.0 * p[1] - 0.5 * p[2])
    }

    #[test]
    fn identity_is_exact() {
        let v = ramp();
        let r = resample(&v, v.geometry(), &Identity, Interpolation::Linear).unwrap();
        assert_eq!(r.data(), v.data());
        let r = resample(&v, v.geometry(), &Identity, Interpolation::Nearest).unwrap();
        assert_eq!(r.data(), v.data());
    }

    #[test]
    fn linear_is_exact_on_affine_ramps() {
        let v = ramp();
        let got = sample_linear(v.data(), v.dims(), [1.25, 2.5, 0.75]).unwrap();
        let p = v.geometry().to_world([1.25, 2.5, 0.75]);
        let want = 1.0 + p[0] + 3.0 * p[1] - 0.5 * p[2];
        assert!((got - want).abs() < 1e-12);
        // upper faces are inside the field
        assert!(sample_linear(v.data(), v.dims(), [5.0, 4.0, 3.0]).is_some());
        assert!(sample_linear(v.data(), v.dims(), [5.01, 4.0, 3.0]).is_none());
    }

    #[test]
    fn one_voxel_shift_zero_fills() {
        let v = ramp();
        let shift = |p: [f64; 3]| [p[0] + 2.0, p[1], p[2]];
        let r = resample(&v, v.geometry(), &shift, Interpolation::Linear).unwrap();
        let g = v.geometry();
        for k in 0..4 {
            for j in 0..5 {
                for i in 0..6 {
                    let got = r.get(i, j, k);
                    if i == 5 {
                        assert_eq!(got, 0.0);
                    } else {
                        assert!((got - v.get(i + 1, j, k)).abs() < 1e-9, "{i} {j} {k}");
                    }
                }
            }
        }
        let _ = g;
    }

    #[test]
    fn nearest_keeps_masks_binary() {
        let g = Geometry::new([8, 8, 8], [1.0; 3], [0.0; 3]).unwrap();
        let m = Mask::from_world_fn(g.clone(), |p| p[0] > 3.0 && p[1] < 5.0);
        let half = |p: [f64; 3]| [p[0] + 0.5, p[1] - 0.5, p[2]];
        let r = resample_mask(&m, &g, &half).unwrap();
        assert!(r.count() > 0);
        let lv: Volume<f32> = m.to_volume();
        let rv = resample(&lv, &g, &half, Interpolation::Nearest).unwrap();
        assert!(rv.data().iter().all(|&x| x == 0.0 || x == 1.0));
    }
}
