use crate::scalar::Real;
use crate::volume::{gaussian_smooth_vox, Geometry};

/// Smooths with sigma `factor / 2` voxels and keeps every `factor`-th voxel.
pub(crate) fn downsample<T: Real>(data: &[T], geom: &Geometry, factor: usize) -> (Vec<T>, Geometry) {
    if factor <= 1 {
        return (data.to_vec(), geom.clone());
    }
    let mut s = data.to_vec();
    let sigma = 0.5 * factor as f64;
    gaussian_smooth_vox(&mut s, geom.dims(), [sigma; 3]);
    let coarse = geom.downsample(factor);
    let [cx, cy, cz] = coarse.dims();
    let mut out = Vec::with_capacity(coarse.len());
    for k in 0..cz {
        for j in 0..cy {
            for i in 0..cx {
                out.push(s[geom.index(i * factor, j * factor, k * factor)]);
            }
        }
    }
    (out, coarse)
}

/// Central-difference gradient in voxel units (one-sided at the border).
pub(crate) fn gradient<T: Real>(data: &[T], dims: [usize; 3], out: &mut [Vec<T>; 3]) {
    let [nx, ny, nz] = dims;
    let strides = [1, nx, nx * ny];
    let half = T::lit(0.5);
    for c in out.iter_mut() {
        c.resize(data.len(), T::zero());
    }
    for k in 0..nz {
        for j in 0..ny {
            let row = nx * (j + ny * k);
            for i in 0..nx {
                let idx = row + i;
                let pos = [i, j, k];
                for a in 0..3 {
                    let n = dims[a];
                    let s = strides[a];
                    out[a][idx] = if n < 2 {
                        T::zero()
                    } else if pos[a] == 0 {
                        data[idx + s] - data[idx]
                    } else if pos[a] == n - 1 {
                        data[idx] - data[idx - s]
                    } else {
                        (data[idx + s] - data[idx - s]) * half
                    };
                }
            }
        }
    }
}
