//! Spatial mappings between image spaces. Every transform maps a point of the
//! fixed (target) space to the moving (source) space, which is the direction
//! a resampler needs.

use std::path::Path;

use nalgebra::{Matrix3, Matrix4, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::volume::{self, apply4, resample, Geometry, Interpolation, PointMap, Volume};

/// 4×4 homogeneous affine, world mm to world mm.
#[derive(Clone, Debug, PartialEq)]
pub struct AffineTransform {
    matrix: Matrix4<f64>,
}

impl AffineTransform {
    /// Accepts round-off in the last row (up to 1e-9) and snaps it.
    pub fn new(mut matrix: Matrix4<f64>) -> Result<Self> {
        let last = matrix.row(3);
        let off = last[0].abs().max(last[1].abs()).max(last[2].abs()).max((last[3] - 1.0).abs());
        if !(off <= 1e-9) {
            return Err(Error::Geometry("affine last row must be (0,0,0,1)".into()));
        }
        matrix.set_row(3, &nalgebra::RowVector4::new(0.0, 0.0, 0.0, 1.0));
        let det = matrix.fixed_view::<3, 3>(0, 0).determinant();
        if !(det.abs() > 1e-12 && det.is_finite()) {
            return Err(Error::Geometry(format!("affine is singular (det {det:e})")));
        }
        Ok(AffineTransform { matrix })
    }

    pub fn identity() -> Self {
        AffineTransform {
            matrix: Matrix4::identity(),
        }
    }

    pub fn translation(t: [f64; 3]) -> Self {
        AffineTransform {
            matrix: Matrix4::new_translation(&Vector3::from(t)),
        }
    }

    /// Rotation by `angle` radians about `axis` through `center`.
    pub fn rotation_about(center: [f64; 3], axis: [f64; 3], angle: f64) -> Self {
        let rot = nalgebra::Rotation3::from_axis_angle(&nalgebra::Unit::new_normalize(Vector3::from(axis)), angle);
        Self::from_linear_about(center, *rot.matrix())
    }

    /// `p -> L (p - c) + c`.
    pub fn from_linear_about(center: [f64; 3], linear: Matrix3<f64>) -> Self {
        let c = Vector3::from(center);
        let t = c - linear * c;
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&linear);
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&t);
        AffineTransform { matrix: m }
    }

    pub fn matrix(&self) -> &Matrix4<f64> {
        &self.matrix
    }

    pub fn linear(&self) -> Matrix3<f64> {
        self.matrix.fixed_view::<3, 3>(0, 0).into_owned()
    }

    pub fn translation_part(&self) -> [f64; 3] {
        [self.matrix[(0, 3)], self.matrix[(1, 3)], self.matrix[(2, 3)]]
    }

    pub fn inverse(&self) -> AffineTransform {
        Self::new(self.matrix.try_inverse().expect("validated invertible")).expect("inverse of a valid affine")
    }

    /// `self ∘ inner`: apply `inner` first.
    pub fn then_after(&self, inner: &AffineTransform) -> AffineTransform {
        Self::new(self.matrix * inner.matrix).expect("product of valid affines")
    }

    pub fn to_row_major(&self) -> [f64; 16] {
        let mut out = [0.0; 16];
        for r in 0..4 {
            for c in 0..4 {
                out[4 * r + c] = self.matrix[(r, c)];
            }
        }
        out
    }

    pub fn from_row_major(v: &[f64]) -> Result<Self> {
        if v.len() != 16 {
            return Err(Error::Format(format!("affine needs 16 values, got {}", v.len())));
        }
        Self::new(Matrix4::from_row_slice(v))
    }

    /// Rotation angle (degrees) of the closest rotation to the linear part.
    pub fn rotation_angle_deg(&self) -> f64 {
        let svd = self.linear().svd(true, true);
        let r = svd.u.unwrap() * svd.v_t.unwrap();
        let c = ((r.trace() - 1.0) / 2.0).clamp(-1.0, 1.0);
        c.acos().to_degrees()
    }
}

impl PointMap for AffineTransform {
    #[inline]
    fn map_point(&self, p: [f64; 3]) -> [f64; 3] {
        apply4(&self.matrix, p)
    }
}

/// Dense displacement field on a grid: `x -> x + u(x)` with `u` in world mm
/// and trilinearly interpolated; queries outside the grid use the nearest
/// edge value.
#[derive(Clone, Debug)]
pub struct DeformationField {
    geom: Geometry,
    disp: [Vec<f64>; 3],
    inverse: Option<Box<DeformationField>>,
}

impl DeformationField {
    pub fn zeros(geom: Geometry) -> Self {
        let n = geom.len();
        DeformationField {
            geom,
            disp: [vec![0.0; n], vec![0.0; n], vec![0.0; n]],
            inverse: None,
        }
    }

    pub fn from_components(geom: Geometry, disp: [Vec<f64>; 3]) -> Result<Self> {
        if disp.iter().any(|d| d.len() != geom.len()) {
            return Err(Error::Geometry("displacement component length mismatch".into()));
        }
        if disp.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::Geometry("displacement field has non-finite values".into()));
        }
        Ok(DeformationField {
            geom,
            disp,
            inverse: None,
        })
    }

    pub fn with_inverse(mut self, inverse: DeformationField) -> Self {
        self.inverse = Some(Box::new(inverse));
        self
    }

    pub fn geometry(&self) -> &Geometry {
        &self.geom
    }

    pub fn components(&self) -> &[Vec<f64>; 3] {
        &self.disp
    }

    pub fn inverse(&self) -> Option<&DeformationField> {
        self.inverse.as_deref()
    }

    /// Displacement vector stored at voxel `idx`.
    #[inline]
    pub fn at(&self, idx: usize) -> [f64; 3] {
        [self.disp[0][idx], self.disp[1][idx], self.disp[2][idx]]
    }

    /// Interpolated displacement at world point `p`.
    pub fn displacement_at(&self, p: [f64; 3]) -> [f64; 3] {
        let dims = self.geom.dims();
        let v = self.geom.to_voxel(p);
        let v = [0, 1, 2].map(|a| v[a].clamp(0.0, dims[a] as f64 - 1.0));
        [0, 1, 2].map(|c| volume::sample_linear(&self.disp[c], dims, v).unwrap_or(0.0))
    }

    pub fn magnitudes(&self) -> Vec<f64> {
        (0..self.geom.len())
            .map(|i| {
                let d = self.at(i);
                (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt()
            })
            .collect()
    }

    pub fn max_magnitude(&self) -> f64 {
        self.magnitudes().into_iter().fold(0.0, f64::max)
    }

    /// Jacobian determinant of `x -> x + u(x)` at every voxel, by central
    /// differences (one-sided at the border).
    pub fn jacobian_determinants(&self) -> Vec<f64> {
        jacobian_determinants(&self.geom, &self.disp)
    }

    /// Scales the displacement (inverse dropped).
    pub fn scaled(&self, s: f64) -> DeformationField {
        DeformationField {
            geom: self.geom.clone(),
            disp: self.disp.clone().map(|c| c.into_iter().map(|v| v * s).collect()),
            inverse: None,
        }
    }

    /// Field whose map equals `self ∘ inner` sampled on this field's grid,
    /// i.e. `x -> x + u_inner(x) + u_self(x + u_inner(x))`.
    pub fn compose_after(&self, inner: &DeformationField) -> DeformationField {
        let n = self.geom.len();
        let mut disp = [vec![0.0; n], vec![0.0; n], vec![0.0; n]];
        for idx in 0..n {
            let p = self.geom.index_to_world(idx);
            let a = inner.displacement_at(p);
            let q = [p[0] + a[0], p[1] + a[1], p[2] + a[2]];
            let b = self.displacement_at(q);
            for c in 0..3 {
                disp[c][idx] = a[c] + b[c];
            }
        }
        DeformationField {
            geom: self.geom.clone(),
            disp,
            inverse: None,
        }
    }

    /// Fixed-point inversion `v(y) = -u(y + v(y))` on this field's grid.
    pub fn invert(&self, iterations: usize) -> DeformationField {
        let n = self.geom.len();
        let mut inv = [vec![0.0; n], vec![0.0; n], vec![0.0; n]];
        for idx in 0..n {
            let y = self.geom.index_to_world(idx);
            let mut v = [0.0; 3];
            for _ in 0..iterations {
                let u = self.displacement_at([y[0] + v[0], y[1] + v[1], y[2] + v[2]]);
                v = [-u[0], -u[1], -u[2]];
            }
            for c in 0..3 {
                inv[c][idx] = v[c];
            }
        }
        DeformationField {
            geom: self.geom.clone(),
            disp: inv,
            inverse: None,
        }
    }

    /// Mean |forward(inverse(y)) - y| over the grid, in voxels of the
    /// smallest spacing. `None` without a stored inverse.
    pub fn inverse_consistency_residual(&self) -> Option<f64> {
        let inv = self.inverse.as_deref()?;
        let h = self.geom.spacing().into_iter().fold(f64::INFINITY, f64::min);
        let n = inv.geom.len();
        let total: f64 = (0..n)
            .map(|idx| {
                let y = inv.geom.index_to_world(idx);
                let x = inv.map_point(y);
                let z = self.map_point(x);
                ((z[0] - y[0]).powi(2) + (z[1] - y[1]).powi(2) + (z[2] - y[2]).powi(2)).sqrt()
            })
            .sum();
        Some(total / n as f64 / h)
    }

    pub fn component_volume(&self, axis: usize) -> Volume<f32> {
        Volume::new(self.geom.clone(), self.disp[axis].iter().map(|&v| v as f32).collect())
            .expect("field geometry")
    }
}

impl PointMap for DeformationField {
    #[inline]
    fn map_point(&self, p: [f64; 3]) -> [f64; 3] {
        let d = self.displacement_at(p);
        [p[0] + d[0], p[1] + d[1], p[2] + d[2]]
    }
}

pub(crate) fn jacobian_determinants(geom: &Geometry, disp: &[Vec<f64>; 3]) -> Vec<f64> {
    let [nx, ny, nz] = geom.dims();
    // gradients in voxel units, mapped to world by the grid's linear part
    let lin = geom.linear();
    let lin_inv = lin.try_inverse().expect("valid geometry");
    let mut out = vec![0.0; geom.len()];
    let diff = |c: usize, i: usize, j: usize, k: usize, axis: usize| -> f64 {
        let n = [nx, ny, nz][axis];
        if n < 2 {
            return 0.0;
        }
        let pos = [i, j, k][axis];
        let (lo, hi) = (pos.saturating_sub(1), (pos + 1).min(n - 1));
        let mut a = [i, j, k];
        let mut b = [i, j, k];
        a[axis] = lo;
        b[axis] = hi;
        let va = disp[c][geom.index(a[0], a[1], a[2])];
        let vb = disp[c][geom.index(b[0], b[1], b[2])];
        (vb - va) / (hi - lo) as f64
    };
    for k in 0..nz {
        for j in 0..ny {
            for i in 0..nx {
                let mut g = Matrix3::zeros();
                for c in 0..3 {
                    for axis in 0..3 {
                        g[(c, axis)] = diff(c, i, j, k, axis);
                    }
                }
                // du/dx_world = du/dv * dv/dx
                let jac = Matrix3::identity() + g * lin_inv;
                out[geom.index(i, j, k)] = jac.determinant();
            }
        }
    }
    out
}

#[derive(Clone, Debug)]
pub enum TransformComponent {
    Affine(AffineTransform),
    Field(DeformationField),
}

impl PointMap for TransformComponent {
    #[inline]
    fn map_point(&self, p: [f64; 3]) -> [f64; 3] {
        match self {
            TransformComponent::Affine(a) => a.map_point(p),
            TransformComponent::Field(f) => f.map_point(p),
        }
    }
}

/// Ordered chain applied right to left: `map(p) = c[0](c[1](...c[n-1](p)))`.
#[derive(Clone, Debug, Default)]
pub struct CompositeTransform {
    components: Vec<TransformComponent>,
}

impl CompositeTransform {
    pub fn new(components: Vec<TransformComponent>) -> Self {
        CompositeTransform { components }
    }

    pub fn identity() -> Self {
        Self::default()
    }

    pub fn components(&self) -> &[TransformComponent] {
        &self.components
    }

    /// Appends a component applied before all current ones.
    pub fn push_inner(&mut self, c: TransformComponent) {
        self.components.push(c);
    }

    pub fn with_inner(mut self, c: TransformComponent) -> Self {
        self.components.push(c);
        self
    }

    pub fn is_empty(&self) -> bool {
        self.components.is_empty()
    }

    /// Inverse chain, using stored field inverses. Fails if a field has none.
    pub fn inverse(&self) -> Result<CompositeTransform> {
        let mut out = Vec::with_capacity(self.components.len());
        for c in self.components.iter().rev() {
            out.push(match c {
                TransformComponent::Affine(a) => TransformComponent::Affine(a.inverse()),
                TransformComponent::Field(f) => {
                    let inv = f
                        .inverse()
                        .ok_or_else(|| Error::Geometry("field component has no stored inverse".into()))?;
                    TransformComponent::Field(inv.clone().with_inverse(DeformationField {
                        inverse: None,
                        ..f.clone()
                    }))
                }
            });
        }
        Ok(CompositeTransform { components: out })
    }

    pub fn save(&self, dir: impl AsRef<Path>, stem: &str) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut specs = Vec::new();
        for (n, c) in self.components.iter().enumerate() {
            specs.push(match c {
                TransformComponent::Affine(a) => ComponentSpec::Affine {
                    matrix: a.to_row_major().to_vec(),
                },
                TransformComponent::Field(f) => {
                    let write = |f: &DeformationField, tag: &str| -> Result<[String; 3]> {
                        let names = ["x", "y", "z"].map(|ax| format!("{stem}_{n}_{tag}{ax}.nii.gz"));
                        for (axis, name) in names.iter().enumerate() {
                            volume::save_nifti(&f.component_volume(axis), dir.join(name))?;
                        }
                        Ok(names)
                    };
                    let files = write(f, "")?;
                    let inverse = f.inverse().map(|inv| write(inv, "inv_")).transpose()?;
                    ComponentSpec::DisplacementField { files, inverse }
                }
            });
        }
        let json = serde_json::to_string_pretty(&TransformFile { components: specs })?;
        let path = dir.join(format!("{stem}.json"));
        std::fs::write(&path, json).map_err(|e| Error::io(&path, e))
    }

    pub fn load(dir: impl AsRef<Path>, stem: &str) -> Result<Self> {
        let dir = dir.as_ref();
        let path = dir.join(format!("{stem}.json"));
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let file: TransformFile = serde_json::from_str(&text)?;
        let read_field = |files: &[String; 3]| -> Result<DeformationField> {
            let mut geom = None;
            let mut disp: [Vec<f64>; 3] = Default::default();
            for (axis, name) in files.iter().enumerate() {
                let v: Volume<f64> = volume::load_nifti(dir.join(name))?;
                geom = Some(v.geometry().clone());
                disp[axis] = v.into_data();
            }
            DeformationField::from_components(geom.expect("three files"), disp)
        };
        let mut components = Vec::new();
        for spec in file.components {
            components.push(match spec {
                ComponentSpec::Affine { matrix } => TransformComponent::Affine(AffineTransform::from_row_major(&matrix)?),
                ComponentSpec::DisplacementField { files, inverse } => {
                    let mut f = read_field(&files)?;
                    if let Some(inv) = inverse {
                        f = f.with_inverse(read_field(&inv)?);
                    }
                    TransformComponent::Field(f)
                }
            });
        }
        Ok(CompositeTransform { components })
    }
}

impl From<AffineTransform> for CompositeTransform {
    fn from(a: AffineTransform) -> Self {
        CompositeTransform::new(vec![TransformComponent::Affine(a)])
    }
}

impl From<DeformationField> for CompositeTransform {
    fn from(f: DeformationField) -> Self {
        CompositeTransform::new(vec![TransformComponent::Field(f)])
    }
}

impl PointMap for CompositeTransform {
    #[inline]
    fn map_point(&self, p: [f64; 3]) -> [f64; 3] {
        self.components.iter().rev().fold(p, |q, c| c.map_point(q))
    }
}

#[derive(Serialize, Deserialize)]
struct TransformFile {
    components: Vec<ComponentSpec>,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
enum ComponentSpec {
    /// Row-major 4×4.
    Affine { matrix: Vec<f64> },
    /// One float32 NIfTI volume per world axis, displacement in mm.
    DisplacementField {
        files: [String; 3],
        #[serde(default, skip_serializing_if = "Option::is_none")]
        inverse: Option<[String; 3]>,
    },
}

/// Resamples `vol` onto `target` through `transform`.
pub fn apply<T: Real>(
    transform: &CompositeTransform,
    vol: &Volume<T>,
    target: &Geometry,
    interp: Interpolation,
) -> Result<Volume<T>> {
    resample(vol, target, transform, interp)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn singular_affine_is_rejected() {
        let mut m = Matrix4::identity();
        m[(2, 2)] = 0.0;
        assert!(matches!(AffineTransform::new(m), Err(Error::Geometry(_))));
        m[(2, 2)] = 1.0;
        m[(3, 0)] = 0.5;
        assert!(AffineTransform::new(m).is_err());
    }

    #[test]
    fn composite_applies_right_to_left() {
        let t = AffineTransform::translation([1.0, 0.0, 0.0]);
        let s = AffineTransform::new(Matrix4::new_scaling(2.0)).unwrap();
        let c = CompositeTransform::new(vec![TransformComponent::Affine(s), TransformComponent::Affine(t)]);
        // scale(translate(p))
        assert_eq!(c.map_point([1.0, 1.0, 1.0]), [4.0, 2.0, 2.0]);
        let inv = c.inverse().unwrap();
        let p = inv.map_point(c.map_point([0.3, -2.0, 5.0]));
        assert!((p[0] - 0.3).abs() < 1e-12 && (p[1] + 2.0).abs() < 1e-12);
    }

    #[test]
    fn rotation_angle_is_recovered() {
        let r = AffineTransform::rotation_about([1.0, 2.0, 3.0], [0.0, 0.0, 1.0], 5f64.to_radians());
        assert!((r.rotation_angle_deg() - 5.0).abs() < 1e-9);
        let c = r.map_point([1.0, 2.0, 3.0]);
        assert!((c[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn field_inversion_and_jacobian() {
        let g = Geometry::centered([20, 20, 20], [2.0; 3], [0.0; 3]).unwrap();
        let n = g.len();
        let mut disp: [Vec<f64>; 3] = [vec![0.0; n], vec![0.0; n], vec![0.0; n]];
        for idx in 0..n {
            let p = g.index_to_world(idx);
            disp[0][idx] = 2.0 * (p[1] / 8.0).sin();
            disp[1][idx] = 1.5 * (p[2] / 10.0).cos();
        }
        let f = DeformationField::from_components(g, disp).unwrap();
        let inv = f.invert(30);
        let f = f.with_inverse(inv);
        assert!(f.inverse_consistency_residual().unwrap() < 0.05);
        assert!(f.jacobian_determinants().iter().all(|&j| j > 0.0));
    }

    #[test]
    fn save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let g = Geometry::centered([6, 5, 4], [2.0; 3], [0.0; 3]).unwrap();
        let mut f = DeformationField::zeros(g.clone());
        f.disp[1][7] = 0.25;
        let f = f.clone().with_inverse(f.scaled(-1.0));
        let a = AffineTransform::rotation_about([0.0; 3], [1.0, 0.0, 0.0], 0.1);
        let c = CompositeTransform::new(vec![TransformComponent::Affine(a.clone()), TransformComponent::Field(f)]);
        c.save(dir.path(), "xfm").unwrap();
        let back = CompositeTransform::load(dir.path(), "xfm").unwrap();
        let p = [0.7, -1.0, 2.0];
        let (x, y) = (c.map_point(p), back.map_point(p));
        for a in 0..3 {
            assert!((x[a] - y[a]).abs() < 1e-5);
        }
        assert!(back.inverse().is_ok());
    }
}
