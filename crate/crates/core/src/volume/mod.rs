//! Volumes, masks and label maps on a shared voxel geometry, plus the
//! image-processing primitives the rest of the pipeline is built from.

mod components;
mod geometry;
mod interp;
mod metrics;
mod morphology;
pub mod nifti;
mod smooth;
mod stats;

pub use components::{connected_components, largest_component, Connectivity};
pub use geometry::Geometry;
pub(crate) use geometry::apply4;
pub use interp::{
    resample, resample_labels, resample_mask, resample_mask_linear, sample_linear, sample_nearest, Identity,
    Interpolation, PointMap,
};
pub use metrics::dice;
pub use morphology::{morphology, MorphOp};
pub use nifti::{load_nifti, save_nifti};
pub use smooth::{gaussian_smooth, gaussian_smooth_vox, smoothing_kernel};
pub use stats::{median, multi_otsu_thresholds, otsu_threshold, percentile};

use crate::error::{Error, Result};
use crate::scalar::Real;

/// On-disk voxel representation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum DataType {
    #[default]
    Float32,
    Int16,
    Uint8,
}

/// Scalar 3D image.
#[derive(Clone, Debug)]
pub struct Volume<T> {
    geom: Geometry,
    data: Vec<T>,
    dtype: DataType,
}

impl<T: Real> Volume<T> {
    pub fn new(geom: Geometry, data: Vec<T>) -> Result<Self> {
        if data.len() != geom.len() {
            return Err(Error::Geometry(format!(
                "data length {} does not match grid of {} voxels",
                data.len(),
                geom.len()
            )));
        }
        Ok(Volume {
            geom,
            data,
            dtype: DataType::Float32,
        })
    }

    pub fn filled(geom: Geometry, value: T) -> Self {
        let data = vec![value; geom.len()];
        Volume {
            geom,
            data,
            dtype: DataType::Float32,
        }
    }

    pub fn zeros(geom: Geometry) -> Self {
        Self::filled(geom, T::zero())
    }

    /// Builds a volume by evaluating `f` at every voxel's world position.
    pub fn from_world_fn(geom: Geometry, mut f: impl FnMut([f64; 3]) -> T) -> Self {
        let data = (0..geom.len()).map(|idx| f(geom.index_to_world(idx))).collect();
        Volume {
            geom,
            data,
            dtype: DataType::Float32,
        }
    }

    pub fn with_dtype(mut self, dtype: DataType) -> Self {
        self.dtype = dtype;
        self
    }

    pub fn dtype(&self) -> DataType {
        self.dtype
    }

    pub fn geometry(&self) -> &Geometry {
        &self.geom
    }

    pub fn dims(&self) -> [usize; 3] {
        self.geom.dims()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize, k: usize) -> T {
        self.data[self.geom.index(i, j, k)]
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Volume {
            geom: self.geom.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
            dtype: self.dtype,
        }
    }

    /// Same data on a different scalar type.
    pub fn cast<U: Real>(&self) -> Volume<U> {
        Volume {
            geom: self.geom.clone(),
            data: self.data.iter().map(|v| U::lit(v.as_f64())).collect(),
            dtype: self.dtype,
        }
    }

    /// Copy with every voxel outside `mask` set to zero.
    pub fn masked(&self, mask: &Mask) -> Result<Self> {
        self.geom.check_same(mask.geometry())?;
        Ok(Volume {
            geom: self.geom.clone(),
            data: self
                .data
                .iter()
                .zip(mask.data())
                .map(|(&v, &m)| if m { v } else { T::zero() })
                .collect(),
            dtype: self.dtype,
        })
    }

    /// Voxels strictly above `threshold`.
    pub fn threshold(&self, threshold: T) -> Mask {
        Mask {
            geom: self.geom.clone(),
            data: self.data.iter().map(|&v| v > threshold).collect(),
        }
    }

    /// Values at voxels inside `mask`, in scan order.
    pub fn values_in(&self, mask: &Mask) -> Vec<T> {
        self.data
            .iter()
            .zip(mask.data())
            .filter_map(|(&v, &m)| m.then_some(v))
            .collect()
    }

    pub fn mean_in(&self, mask: &Mask) -> Option<f64> {
        let (mut s, mut n) = (0.0, 0usize);
        for (&v, &m) in self.data.iter().zip(mask.data()) {
            if m {
                s += v.as_f64();
                n += 1;
            }
        }
        (n > 0).then(|| s / n as f64)
    }

    /// Extracts the sub-block `lo..hi` with its geometry.
    pub fn crop(&self, lo: [usize; 3], hi: [usize; 3]) -> Result<Self> {
        let geom = self.geom.crop(lo, hi)?;
        let [nx, ny, nz] = geom.dims();
        let mut data = Vec::with_capacity(geom.len());
        for k in 0..nz {
            for j in 0..ny {
                let start = self.geom.index(lo[0], lo[1] + j, lo[2] + k);
                data.extend_from_slice(&self.data[start..start + nx]);
            }
        }
        Ok(Volume {
            geom,
            data,
            dtype: self.dtype,
        })
    }
}

/// Binary volume.
#[derive(Clone, Debug, PartialEq)]
pub struct Mask {
    geom: Geometry,
    data: Vec<bool>,
}

impl PartialEq for Geometry {
    fn eq(&self, other: &Self) -> bool {
        self.approx_eq(other, 0.0)
    }
}

impl Mask {
    pub fn new(geom: Geometry, data: Vec<bool>) -> Result<Self> {
        if data.len() != geom.len() {
            return Err(Error::Geometry(format!(
                "mask length {} does not match grid of {} voxels",
                data.len(),
                geom.len()
            )));
        }
        Ok(Mask { geom, data })
    }

    pub fn empty(geom: Geometry) -> Self {
        let data = vec![false; geom.len()];
        Mask { geom, data }
    }

    pub fn full(geom: Geometry) -> Self {
        let data = vec![true; geom.len()];
        Mask { geom, data }
    }

    pub fn from_world_fn(geom: Geometry, mut f: impl FnMut([f64; 3]) -> bool) -> Self {
        let data = (0..geom.len()).map(|idx| f(geom.index_to_world(idx))).collect();
        Mask { geom, data }
    }

    pub fn geometry(&self) -> &Geometry {
        &self.geom
    }

    pub fn data(&self) -> &[bool] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [bool] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize, k: usize) -> bool {
        self.data[self.geom.index(i, j, k)]
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.data.iter().any(|&b| b)
    }

    pub fn volume_mm3(&self) -> f64 {
        self.count() as f64 * self.geom.voxel_volume()
    }

    fn zip_with(&self, other: &Mask, f: impl Fn(bool, bool) -> bool) -> Result<Mask> {
        self.geom.check_same(&other.geom)?;
        Ok(Mask {
            geom: self.geom.clone(),
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        })
    }

    pub fn and(&self, other: &Mask) -> Result<Mask> {
        self.zip_with(other, |a, b| a && b)
    }

    pub fn or(&self, other: &Mask) -> Result<Mask> {
        self.zip_with(other, |a, b| a || b)
    }

    pub fn and_not(&self, other: &Mask) -> Result<Mask> {
        self.zip_with(other, |a, b| a && !b)
    }

    pub fn not(&self) -> Mask {
        Mask {
            geom: self.geom.clone(),
            data: self.data.iter().map(|&b| !b).collect(),
        }
    }

    pub fn is_subset_of(&self, other: &Mask) -> bool {
        self.data.iter().zip(&other.data).all(|(&a, &b)| !a || b)
    }

    pub fn intersection_count(&self, other: &Mask) -> usize {
        self.data.iter().zip(&other.data).filter(|(&a, &b)| a && b).count()
    }

    /// Mean world position of the foreground voxels.
    pub fn centroid_world(&self) -> Option<[f64; 3]> {
        let mut acc = [0.0; 3];
        let mut n = 0usize;
        for (idx, &b) in self.data.iter().enumerate() {
            if b {
                let [i, j, k] = self.geom.ijk(idx);
                acc[0] += i as f64;
                acc[1] += j as f64;
                acc[2] += k as f64;
                n += 1;
            }
        }
        (n > 0).then(|| self.geom.to_world(acc.map(|a| a / n as f64)))
    }

    /// Inclusive-exclusive voxel bounding box of the foreground.
    pub fn bounding_box(&self) -> Option<([usize; 3], [usize; 3])> {
        let mut lo = [usize::MAX; 3];
        let mut hi = [0usize; 3];
        let mut any = false;
        for (idx, &b) in self.data.iter().enumerate() {
            if b {
                any = true;
                let v = self.geom.ijk(idx);
                for a in 0..3 {
                    lo[a] = lo[a].min(v[a]);
                    hi[a] = hi[a].max(v[a] + 1);
                }
            }
        }
        any.then_some((lo, hi))
    }

    /// 0/1 intensity image of the mask.
    pub fn to_volume<T: Real>(&self) -> Volume<T> {
        Volume {
            geom: self.geom.clone(),
            data: self.data.iter().map(|&b| if b { T::one() } else { T::zero() }).collect(),
            dtype: DataType::Uint8,
        }
    }

    pub fn crop(&self, lo: [usize; 3], hi: [usize; 3]) -> Result<Mask> {
        let v: Volume<f32> = self.to_volume();
        Ok(v.crop(lo, hi)?.threshold(0.5))
    }
}

/// Small non-negative integer labels on a grid.
#[derive(Clone, Debug, PartialEq)]
pub struct LabelVolume {
    geom: Geometry,
    data: Vec<u16>,
}

impl LabelVolume {
    pub fn new(geom: Geometry, data: Vec<u16>) -> Result<Self> {
        if data.len() != geom.len() {
            return Err(Error::Geometry(format!(
                "label length {} does not match grid of {} voxels",
                data.len(),
                geom.len()
            )));
        }
        Ok(LabelVolume { geom, data })
    }

    pub fn zeros(geom: Geometry) -> Self {
        let data = vec![0; geom.len()];
        LabelVolume { geom, data }
    }

    pub fn geometry(&self) -> &Geometry {
        &self.geom
    }

    pub fn data(&self) -> &[u16] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [u16] {
        &mut self.data
    }

    pub fn mask_of(&self, label: u16) -> Mask {
        Mask {
            geom: self.geom.clone(),
            data: self.data.iter().map(|&l| l == label).collect(),
        }
    }

    pub fn mask_of_any(&self, labels: &[u16]) -> Mask {
        Mask {
            geom: self.geom.clone(),
            data: self.data.iter().map(|l| labels.contains(l)).collect(),
        }
    }

    /// Sorted distinct labels present, background included.
    pub fn labels(&self) -> Vec<u16> {
        let mut seen = [false; 1 << 16];
        for &l in &self.data {
            seen[l as usize] = true;
        }
        (0..=u16::MAX).filter(|&l| seen[l as usize]).collect()
    }

    /// Checks every label belongs to `allowed`.
    pub fn check_label_set(&self, allowed: &[u16]) -> Result<()> {
        match self.data.iter().find(|l| !allowed.contains(l)) {
            Some(l) => Err(Error::Config(format!("label {l} outside declared set {allowed:?}"))),
            None => Ok(()),
        }
    }

    pub fn to_volume<T: Real>(&self) -> Volume<T> {
        Volume {
            geom: self.geom.clone(),
            data: self.data.iter().map(|&l| T::lit(l as f64)).collect(),
            dtype: DataType::Int16,
        }
    }

    pub fn from_volume<T: Real>(vol: &Volume<T>) -> LabelVolume {
        LabelVolume {
            geom: vol.geometry().clone(),
            data: vol
                .data()
                .iter()
                .map(|v| v.as_f64().round().clamp(0.0, u16::MAX as f64) as u16)
                .collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn geom() -> Geometry {
        Geometry::new([4, 3, 2], [1.0; 3], [0.0; 3]).unwrap()
    }

    #[test]
    fn length_mismatch_is_rejected() {
        assert!(Volume::<f32>::new(geom(), vec![0.0; 5]).is_err());
        assert!(Mask::new(geom(), vec![false; 25]).is_err());
    }

    #[test]
    fn mask_set_algebra() {
        let g = geom();
        let a = Mask::from_world_fn(g.clone(), |p| p[0] < 2.0);
        let b = Mask::from_world_fn(g, |p| p[1] < 1.0);
        assert_eq!(a.and(&b).unwrap().count(), 4);
        assert_eq!(a.or(&b).unwrap().count(), 16);
        assert_eq!(a.and_not(&b).unwrap().count(), 8);
        assert!(a.and(&b).unwrap().is_subset_of(&a));
    }

    #[test]
    fn crop_extracts_block() {
        let v = Volume::<f32>::from_world_fn(geom(), |p| (p[0] + 10.0 * p[1] + 100.0 * p[2]) as f32);
        let c = v.crop([1, 1, 1], [3, 3, 2]).unwrap();
        assert_eq!(c.data(), &[111.0, 112.0, 121.0, 122.0]);
    }

    #[test]
    fn centroid_of_two_voxels() {
        let mut m = Mask::empty(geom());
        m.data_mut()[0] = true;
        m.data_mut()[3] = true;
        assert_eq!(m.centroid_world().unwrap(), [1.5, 0.0, 0.0]);
        assert_eq!(m.bounding_box().unwrap(), ([0, 0, 0], [4, 1, 1]));
    }
}
