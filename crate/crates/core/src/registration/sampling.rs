/// Trilinear stencil at a continuous voxel position, clamped to the grid.
#[derive(Clone, Copy)]
pub(crate) struct Stencil {
    idx: [usize; 8],
    w: [f64; 8],
}

impl Stencil {
    #[inline]
    pub(crate) fn clamped(dims: [usize; 3], v: [f64; 3]) -> Stencil {
        let mut b = [0usize; 3];
        let mut n1 = [0usize; 3];
        let mut t = [0.0f64; 3];
        for a in 0..3 {
            let hi = dims[a] as f64 - 1.0;
            let x = v[a].clamp(0.0, hi.max(0.0));
            let f = x.floor();
            let mut bi = f as usize;
            let mut ti = x - f;
            if bi + 1 >= dims[a] {
                if dims[a] == 1 {
                    bi = 0;
                    ti = 0.0;
                } else {
                    bi = dims[a] - 2;
                    ti = x - bi as f64;
                }
            }
            b[a] = bi;
            t[a] = ti;
            n1[a] = if dims[a] > 1 { 1 } else { 0 };
        }
        let sy = dims[0];
        let sz = dims[0] * dims[1];
        let i0 = b[0] + sy * b[1] + sz * b[2];
        let (dx, dy, dz) = (n1[0], n1[1] * sy, n1[2] * sz);
        let (fx, fy, fz) = (t[0], t[1], t[2]);
        let (gx, gy, gz) = (1.0 - fx, 1.0 - fy, 1.0 - fz);
        Stencil {
            idx: [
                i0,
                i0 + dx,
                i0 + dy,
                i0 + dy + dx,
                i0 + dz,
                i0 + dz + dx,
                i0 + dz + dy,
                i0 + dz + dy + dx,
            ],
            w: [
                gx * gy * gz,
                fx * gy * gz,
                gx * fy * gz,
                fx * fy * gz,
                gx * gy * fz,
                fx * gy * fz,
                gx * fy * fz,
                fx * fy * fz,
            ],
        }
    }

    /// Stencil for a position that may fall outside; `None` there.
    #[inline]
    pub(crate) fn inside(dims: [usize; 3], v: [f64; 3]) -> Option<Stencil> {
        for a in 0..3 {
            if !(v[a] >= -1e-6 && v[a] <= dims[a] as f64 - 1.0 + 1e-6) {
                return None;
            }
        }
        Some(Self::clamped(dims, v))
    }

    #[inline]
    pub(crate) fn sample(&self, data: &[f64]) -> f64 {
        let mut s = 0.0;
        for q in 0..8 {
            s += self.w[q] * data[self.idx[q]];
        }
        s
    }

    #[inline]
    pub(crate) fn sample4(&self, data: &[[f64; 4]]) -> [f64; 4] {
        let mut s = [0.0; 4];
        for q in 0..8 {
            let d = &data[self.idx[q]];
            let w = self.w[q];
            s[0] += w * d[0];
            s[1] += w * d[1];
            s[2] += w * d[2];
            s[3] += w * d[3];
        }
        s
    }
}
