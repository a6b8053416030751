use nalgebra::{Matrix3, Matrix4, Vector4};

use crate::error::{Error, Result};

/// Voxel lattice plus its placement in world (scanner) millimetres.
///
/// Voxel `(i, j, k)` is stored at linear index `i + nx * (j + ny * k)`.
#[derive(Clone, Debug)]
pub struct Geometry {
    dims: [usize; 3],
    spacing: [f64; 3],
    voxel_to_world: Matrix4<f64>,
    world_to_voxel: Matrix4<f64>,
}

impl Geometry {
    /// Axis-aligned grid whose voxel `(0,0,0)` sits at `origin`.
    pub fn new(dims: [usize; 3], spacing: [f64; 3], origin: [f64; 3]) -> Result<Self> {
        let mut m = Matrix4::identity();
        for a in 0..3 {
            m[(a, a)] = spacing[a];
            m[(a, 3)] = origin[a];
        }
        Self::from_affine(dims, spacing, m)
    }

    /// Axis-aligned grid centred on `center` (world mm).
    pub fn centered(dims: [usize; 3], spacing: [f64; 3], center: [f64; 3]) -> Result<Self> {
        let origin = [0, 1, 2].map(|a| center[a] - 0.5 * (dims[a] as f64 - 1.0) * spacing[a]);
        Self::new(dims, spacing, origin)
    }

    pub fn from_affine(dims: [usize; 3], spacing: [f64; 3], voxel_to_world: Matrix4<f64>) -> Result<Self> {
        if dims.contains(&0) {
            return Err(Error::Geometry(format!("dimensions must be positive, got {dims:?}")));
        }
        if spacing.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
            return Err(Error::Geometry(format!("spacing must be positive, got {spacing:?}")));
        }
        let last = voxel_to_world.row(3);
        if last[0] != 0.0 || last[1] != 0.0 || last[2] != 0.0 || last[3] != 1.0 {
            return Err(Error::Geometry("voxel_to_world last row must be (0,0,0,1)".into()));
        }
        let world_to_voxel = voxel_to_world
            .try_inverse()
            .filter(|m| m.iter().all(|v| v.is_finite()))
            .ok_or_else(|| Error::Geometry("voxel_to_world is not invertible".into()))?;
        Ok(Geometry {
            dims,
            spacing,
            voxel_to_world,
            world_to_voxel,
        })
    }

    #[inline]
    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    #[inline]
    pub fn spacing(&self) -> [f64; 3] {
        self.spacing
    }

    pub fn voxel_to_world(&self) -> &Matrix4<f64> {
        &self.voxel_to_world
    }

    pub fn world_to_voxel(&self) -> &Matrix4<f64> {
        &self.world_to_voxel
    }

    /// Linear (direction × spacing) part of the voxel-to-world map.
    pub fn linear(&self) -> Matrix3<f64> {
        self.voxel_to_world.fixed_view::<3, 3>(0, 0).into_owned()
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.dims[0] * self.dims[1] * self.dims[2]
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn voxel_volume(&self) -> f64 {
        self.spacing.iter().product()
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.dims[0] * (j + self.dims[1] * k)
    }

    #[inline]
    pub fn ijk(&self, idx: usize) -> [usize; 3] {
        let i = idx % self.dims[0];
        let r = idx / self.dims[0];
        [i, r % self.dims[1], r / self.dims[1]]
    }

    #[inline]
    pub fn contains_index(&self, i: isize, j: isize, k: isize) -> bool {
        i >= 0
            && j >= 0
            && k >= 0
            && (i as usize) < self.dims[0]
            && (j as usize) < self.dims[1]
            && (k as usize) < self.dims[2]
    }

    #[inline]
    pub fn to_world(&self, v: [f64; 3]) -> [f64; 3] {
        apply4(&self.voxel_to_world, v)
    }

    #[inline]
    pub fn to_voxel(&self, p: [f64; 3]) -> [f64; 3] {
        apply4(&self.world_to_voxel, p)
    }

    pub fn index_to_world(&self, idx: usize) -> [f64; 3] {
        let [i, j, k] = self.ijk(idx);
        self.to_world([i as f64, j as f64, k as f64])
    }

    /// World position of the grid centre.
    pub fn center(&self) -> [f64; 3] {
        self.to_world(self.dims.map(|d| 0.5 * (d as f64 - 1.0)))
    }

    /// True when both grids have the same lattice and placement within `tol` mm.
    pub fn approx_eq(&self, other: &Geometry, tol: f64) -> bool {
        self.dims == other.dims
            && self
                .spacing
                .iter()
                .zip(other.spacing.iter())
                .all(|(a, b)| (a - b).abs() <= tol)
            && self
                .voxel_to_world
                .iter()
                .zip(other.voxel_to_world.iter())
                .all(|(a, b)| (a - b).abs() <= tol)
    }

    pub fn check_same(&self, other: &Geometry) -> Result<()> {
        if self.approx_eq(other, 1e-4) {
            Ok(())
        } else {
            Err(Error::Geometry(format!(
                "grids differ: {:?} vs {:?}",
                self.dims, other.dims
            )))
        }
    }

    /// Sub-grid covering voxels `lo..hi` (exclusive) along each axis.
    pub fn crop(&self, lo: [usize; 3], hi: [usize; 3]) -> Result<Geometry> {
        for a in 0..3 {
            if lo[a] >= hi[a] || hi[a] > self.dims[a] {
                return Err(Error::Geometry(format!("invalid crop {lo:?}..{hi:?} of {:?}", self.dims)));
            }
        }
        let mut m = self.voxel_to_world;
        let shift = self.voxel_to_world * Vector4::new(lo[0] as f64, lo[1] as f64, lo[2] as f64, 1.0);
        for r in 0..3 {
            m[(r, 3)] = shift[r];
        }
        Geometry::from_affine([0, 1, 2].map(|a| hi[a] - lo[a]), self.spacing, m)
    }

    /// Coarser lattice with every `factor`-th voxel; voxel 0 is shared.
    pub fn downsample(&self, factor: usize) -> Geometry {
        if factor <= 1 {
            return self.clone();
        }
        let f = factor as f64;
        let mut m = self.voxel_to_world;
        for r in 0..3 {
            for c in 0..3 {
                m[(r, c)] *= f;
            }
        }
        let dims = self.dims.map(|d| d.div_ceil(factor));
        Geometry::from_affine(dims, self.spacing.map(|s| s * f), m)
            .expect("downsampled geometry of a valid grid is valid")
    }

    /// Index of the voxel axis most aligned with world axis `world_axis`, and
    /// the sign of that alignment.
    pub fn axis_for_world(&self, world_axis: usize) -> (usize, f64) {
        let lin = self.linear();
        let mut best = (0, 0.0f64);
        for c in 0..3 {
            let col = lin.column(c);
            let cos = col[world_axis] / col.norm();
            if cos.abs() > best.1.abs() {
                best = (c, cos);
            }
        }
        (best.0, best.1.signum())
    }
}

#[inline]
pub(crate) fn apply4(m: &Matrix4<f64>, v: [f64; 3]) -> [f64; 3] {
    [
        m[(0, 0)] * v[0] + m[(0, 1)] * v[1] + m[(0, 2)] * v[2] + m[(0, 3)],
        m[(1, 0)] * v[0] + m[(1, 1)] * v[1] + m[(1, 2)] * v[2] + m[(1, 3)],
        m[(2, 0)] * v[0] + m[(2, 1)] * v[1] + m[(2, 2)] * v[2] + m[(2, 3)],
    ]
}


#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn index_round_trip() {
        let g = Geometry::new([3, 4, 5], [1.0, 2.0, 3.0], [0.0; 3]).unwrap();
        for idx in 0..g.len() {
            let [i, j, k] = g.ijk(idx);
            assert_eq!(g.index(i, j, k), idx);
        }
    }

    #[test]
    fn world_voxel_inverse() {
        let g = Geometry::centered([10, 12, 14], [2.0, 1.5, 1.0], [3.0, -4.0, 5.0]).unwrap();
        let p = g.to_world([1.5, 2.25, 7.0]);
        let v = g.to_voxel(p);
        assert!((v[0] - 1.5).abs() < 1e-12 && (v[1] - 2.25).abs() < 1e-12 && (v[2] - 7.0).abs() < 1e-12);
        let c = g.center();
        assert!((c[0] - 3.0).abs() < 1e-12 && (c[1] + 4.0).abs() < 1e-12);
    }

    #[test]
    fn rejects_bad_geometry() {
        assert!(Geometry::new([0, 1, 1], [1.0; 3], [0.0; 3]).is_err());
        assert!(Geometry::new([1, 1, 1], [1.0, 0.0, 1.0], [0.0; 3]).is_err());
        let mut m = Matrix4::identity();
        m[(1, 1)] = 0.0;
        assert!(Geometry::from_affine([2, 2, 2], [1.0; 3], m).is_err());
    }

    #[test]
    fn crop_and_downsample_keep_world_positions() {
        let g = Geometry::new([10, 10, 10], [2.0; 3], [-9.0; 3]).unwrap();
        let c = g.crop([2, 3, 4], [5, 6, 7]).unwrap();
        assert_eq!(c.dims(), [3, 3, 3]);
        assert_eq!(c.to_world([0.0; 3]), g.to_world([2.0, 3.0, 4.0]));
        let d = g.downsample(4);
        assert_eq!(d.dims(), [3, 3, 3]);
        assert_eq!(d.to_world([1.0, 1.0, 1.0]), g.to_world([4.0, 4.0, 4.0]));
    }
}
