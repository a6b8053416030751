use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::registration::AffineTransform;
use crate::scalar::Real;
use crate::volume::{Geometry, LabelVolume, Mask, PointMap, Volume};

/// Zone labels of the synthetic whole-brain label volume.
pub mod zone {
    pub const CEREBRUM_WM: u16 = 2;
    pub const CEREBRUM_GM: u16 = 3;
    pub const VENTRICLE: u16 = 15;
    pub const STEM: u16 = 16;
    pub const CEREBELLUM_LEFT_WM: u16 = 58;
    pub const CEREBELLUM_LEFT_GM: u16 = 67;
    pub const CEREBELLUM_RIGHT_WM: u16 = 237;
    pub const CEREBELLUM_RIGHT_GM: u16 = 238;
    pub const VERMIS: u16 = 251;
    pub const CEREBELLUM: [u16; 5] = [58, 67, 237, 238, 251];
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[repr(u16)]
pub enum Region {
    Background = 0,
    Csf = 1,
    CerebrumWm = 2,
    CerebrumGm = 3,
    CerebellumWm = 4,
    CerebellumGm = 5,
    Stem = 6,
    Ventricle = 7,
    Neck = 8,
}

impl Region {
    pub fn code(self) -> u16 {
        self as u16
    }

    pub fn is_brain(self) -> bool {
        !matches!(self, Region::Background | Region::Csf | Region::Neck)
    }

    pub fn is_wm(self) -> bool {
        matches!(self, Region::CerebrumWm | Region::CerebellumWm | Region::Stem)
    }

    pub fn is_gm(self) -> bool {
        matches!(self, Region::CerebrumGm | Region::CerebellumGm)
    }

    pub fn is_cerebellum(self) -> bool {
        matches!(self, Region::CerebellumWm | Region::CerebellumGm)
    }
}

/// Geometry and contrast of the synthetic head family. Lengths in mm, in a
/// RAS frame centred on the head.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PhantomParams {
    pub dims: [usize; 3],
    pub spacing: f64,
    pub head_axes: [f64; 3],
    pub cerebrum_center: [f64; 3],
    pub cerebrum_axes: [f64; 3],
    pub gm_thickness: f64,
    pub cerebellum_center: [f64; 3],
    pub cerebellum_axes: [f64; 3],
    /// Cerebellar WM core radius (normalised) and its sinusoidal folding.
    pub cerebellum_core: f64,
    pub folding_amplitude: f64,
    pub folding_period: [f64; 2],
    /// The cerebrum is kept outside the cerebellum ellipsoid scaled by this.
    pub tentorium_gap: f64,
    pub ventricle_start: [f64; 3],
    pub ventricle_end: [f64; 3],
    pub ventricle_radius: f64,
    pub stem_xy: [f64; 2],
    pub stem_radius: f64,
    pub stem_z: [f64; 2],
    pub vermis_half_width: f64,
    pub wm_intensity: f64,
    pub gm_intensity: f64,
    pub csf_intensity: f64,
    pub noise_sigma: f64,
    /// Length of a neck cylinder appended below the head (0 for none).
    pub neck_length: f64,
    pub neck_radius: f64,
    pub neck_intensity: f64,
    /// Cerebellum atlas grid and its centre relative to the cerebellum.
    pub cerebellum_grid: [usize; 3],
    pub cerebellum_grid_offset: [f64; 3],
    pub template_noise_sigma: f64,
    /// Smoothing of thresholded template tissue maps into probabilities.
    pub prob_sigma_mm: f64,
}

impl Default for PhantomParams {
    fn default() -> Self {
        PhantomParams {
            dims: [96, 96, 96],
            spacing: 2.0,
            head_axes: [72.0, 90.0, 84.0],
            cerebrum_center: [0.0, 8.0, 18.0],
            cerebrum_axes: [64.0, 80.0, 58.0],
            gm_thickness: 7.0,
            cerebellum_center: [0.0, -48.0, -38.0],
            cerebellum_axes: [46.0, 26.0, 20.0],
            cerebellum_core: 0.6,
            folding_amplitude: 0.08,
            folding_period: [14.0, 12.0],
            tentorium_gap: 1.25,
            ventricle_start: [0.0, -24.0, -48.0],
            ventricle_end: [0.0, -24.0, -28.0],
            ventricle_radius: 5.5,
            stem_xy: [0.0, -8.0],
            stem_radius: 9.0,
            stem_z: [-84.0, 0.0],
            vermis_half_width: 6.0,
            wm_intensity: 120.0,
            gm_intensity: 90.0,
            csf_intensity: 30.0,
            noise_sigma: 5.0,
            neck_length: 0.0,
            neck_radius: 40.0,
            neck_intensity: 70.0,
            cerebellum_grid: [56, 48, 32],
            cerebellum_grid_offset: [0.0, 6.0, 0.0],
            template_noise_sigma: 2.0,
            prob_sigma_mm: 2.0,
        }
    }
}

impl PhantomParams {
    pub fn validate(&self) -> Result<()> {
        if self.dims.contains(&0) || !(self.spacing > 0.0) {
            return Err(Error::Config("phantom grid must be non-empty with positive spacing".into()));
        }
        let positive = |v: &[f64]| v.iter().all(|&x| x > 0.0 && x.is_finite());
        if !positive(&self.head_axes) || !positive(&self.cerebrum_axes) || !positive(&self.cerebellum_axes) {
            return Err(Error::Config("ellipsoid semi-axes must be positive".into()));
        }
        // the cerebellum must fit inside the head
        for a in 0..3 {
            if self.cerebellum_center[a].abs() + self.cerebellum_axes[a] > self.head_axes[a] {
                return Err(Error::Config(format!(
                    "cerebellum extends beyond the head along axis {a}"
                )));
            }
        }
        if !(self.cerebellum_core > 0.0 && self.cerebellum_core < 1.0) {
            return Err(Error::Config("cerebellar core radius must lie in (0, 1)".into()));
        }
        if self.noise_sigma < 0.0 || self.template_noise_sigma < 0.0 {
            return Err(Error::Config("noise sigma must be non-negative".into()));
        }
        Ok(())
    }

    pub fn geometry(&self) -> Geometry {
        Geometry::centered(self.dims, [self.spacing; 3], [0.0; 3]).expect("validated phantom grid")
    }

    /// Cerebellum atlas grid in its own frame (origin at the cerebellum centre).
    pub fn cerebellum_geometry(&self) -> Geometry {
        Geometry::centered(self.cerebellum_grid, [self.spacing; 3], self.cerebellum_grid_offset)
            .expect("validated cerebellum grid")
    }

    /// Maps cerebellum-atlas points to whole-brain points.
    pub fn provenance(&self) -> AffineTransform {
        AffineTransform::translation(self.cerebellum_center)
    }

    /// Analytic cerebellum ellipsoid volume in mm³.
    pub fn cerebellum_volume(&self) -> f64 {
        let [a, b, c] = self.cerebellum_axes;
        4.0 / 3.0 * std::f64::consts::PI * a * b * c
    }

    /// Tissue class at anatomy-frame point `q`.
    pub fn classify(&self, q: [f64; 3]) -> Region {
        let nr = |c: [f64; 3], ax: [f64; 3], s: f64| {
            (((q[0] - c[0]) / (ax[0] * s)).powi(2)
                + ((q[1] - c[1]) / (ax[1] * s)).powi(2)
                + ((q[2] - c[2]) / (ax[2] * s)).powi(2))
            .sqrt()
        };
        let in_head = nr([0.0; 3], self.head_axes, 1.0) < 1.0;
        if !in_head {
            let below = q[2] < 0.0
                && q[2] > -self.head_axes[2] - self.neck_length
                && q[0] * q[0] + q[1] * q[1] < self.neck_radius * self.neck_radius;
            return if self.neck_length > 0.0 && below { Region::Neck } else { Region::Background };
        }
        if capsule_distance(q, self.ventricle_start, self.ventricle_end) < self.ventricle_radius {
            return Region::Ventricle;
        }
        let cb = nr(self.cerebellum_center, self.cerebellum_axes, 1.0);
        if cb < 1.0 {
            let d = [0, 1, 2].map(|a| q[a] - self.cerebellum_center[a]);
            let tau = std::f64::consts::TAU;
            let core = self.cerebellum_core
                + self.folding_amplitude
                    * (tau * d[0] / self.folding_period[0]).sin()
                    * (tau * d[2] / self.folding_period[1]).sin();
            return if cb < core { Region::CerebellumWm } else { Region::CerebellumGm };
        }
        let [sx, sy] = self.stem_xy;
        let in_stem = (q[0] - sx).powi(2) + (q[1] - sy).powi(2) < self.stem_radius * self.stem_radius
            && q[2] > self.stem_z[0]
            && q[2] < self.stem_z[1];
        if in_stem {
            return Region::Stem;
        }
        let in_cerebrum = nr(self.cerebrum_center, self.cerebrum_axes, 1.0) < 1.0
            && nr(self.cerebellum_center, self.cerebellum_axes, self.tentorium_gap) >= 1.0;
        if in_cerebrum {
            let inner = self.cerebrum_axes.map(|a| (a - self.gm_thickness).max(1.0));
            return if nr(self.cerebrum_center, inner, 1.0) < 1.0 {
                Region::CerebrumWm
            } else {
                Region::CerebrumGm
            };
        }
        Region::Csf
    }

    pub fn intensity(&self, r: Region) -> f64 {
        match r {
            Region::Background => 0.0,
            Region::Csf | Region::Ventricle => self.csf_intensity,
            Region::CerebrumWm | Region::CerebellumWm | Region::Stem => self.wm_intensity,
            Region::CerebrumGm | Region::CerebellumGm => self.gm_intensity,
            Region::Neck => self.neck_intensity,
        }
    }

    /// Whole-brain zone label at `q` (0 outside labelled brain).
    pub fn zone(&self, q: [f64; 3], r: Region) -> u16 {
        let x = q[0] - self.cerebellum_center[0];
        let side = |left: u16, right: u16| {
            if x.abs() <= self.vermis_half_width {
                zone::VERMIS
            } else if x < 0.0 {
                left
            } else {
                right
            }
        };
        match r {
            Region::CerebrumWm => zone::CEREBRUM_WM,
            Region::CerebrumGm => zone::CEREBRUM_GM,
            Region::Ventricle => zone::VENTRICLE,
            Region::Stem => zone::STEM,
            Region::CerebellumWm => side(zone::CEREBELLUM_LEFT_WM, zone::CEREBELLUM_RIGHT_WM),
            Region::CerebellumGm => side(zone::CEREBELLUM_LEFT_GM, zone::CEREBELLUM_RIGHT_GM),
            _ => 0,
        }
    }
}

fn capsule_distance(p: [f64; 3], a: [f64; 3], b: [f64; 3]) -> f64 {
    let ab = [b[0] - a[0], b[1] - a[1], b[2] - a[2]];
    let ap = [p[0] - a[0], p[1] - a[1], p[2] - a[2]];
    let len2 = ab[0] * ab[0] + ab[1] * ab[1] + ab[2] * ab[2];
    let t = if len2 > 0.0 {
        ((ap[0] * ab[0] + ap[1] * ab[1] + ap[2] * ab[2]) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let d = [ap[0] - t * ab[0], ap[1] - t * ab[1], ap[2] - t * ab[2]];
    (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt()
}

/// Per-subject anatomical variation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SubjectJitter {
    pub rotation_deg: [f64; 3],
    pub scale: [f64; 3],
    pub translation: [f64; 3],
    pub cerebellum_scale: [f64; 3],
    pub cerebellum_shift: [f64; 3],
    /// Coefficients of a log-polynomial bias field (x, y, z, x², y², z²)
    /// in coordinates normalised by 100 mm.
    pub bias: [f64; 6],
}

impl Default for SubjectJitter {
    fn default() -> Self {
        SubjectJitter {
            rotation_deg: [0.0; 3],
            scale: [1.0; 3],
            translation: [0.0; 3],
            cerebellum_scale: [1.0; 3],
            cerebellum_shift: [0.0; 3],
            bias: [0.0; 6],
        }
    }
}

impl SubjectJitter {
    /// Random jitter: rotations ±4°, scales 0.95–1.05, translations ±5 mm,
    /// cerebellar scale ±4 % and shift ±2 mm, mild bias.
    pub fn random(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut u = |lo: f64, hi: f64| rng.random_range(lo..hi);
        SubjectJitter {
            rotation_deg: [u(-4.0, 4.0), u(-4.0, 4.0), u(-4.0, 4.0)],
            scale: [u(0.95, 1.05), u(0.95, 1.05), u(0.95, 1.05)],
            translation: [u(-5.0, 5.0), u(-5.0, 5.0), u(-5.0, 5.0)],
            cerebellum_scale: [u(0.96, 1.04), u(0.96, 1.04), u(0.96, 1.04)],
            cerebellum_shift: [u(-2.0, 2.0), u(-2.0, 2.0), u(-2.0, 2.0)],
            bias: [u(-0.08, 0.08), u(-0.08, 0.08), u(-0.08, 0.08), u(-0.05, 0.05), u(-0.05, 0.05), u(-0.05, 0.05)],
        }
    }

    /// Anatomy-to-world affine.
    pub fn placement(&self) -> AffineTransform {
        let r = self.rotation_deg.map(f64::to_radians);
        let rot = nalgebra::Rotation3::from_euler_angles(r[0], r[1], r[2]);
        let lin = rot.matrix() * nalgebra::Matrix3::from_diagonal(&nalgebra::Vector3::from(self.scale));
        let mut m = nalgebra::Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&lin);
        for a in 0..3 {
            m[(a, 3)] = self.translation[a];
        }
        AffineTransform::new(m).expect("jitter scales are positive")
    }

    fn apply_to(&self, p: &PhantomParams) -> PhantomParams {
        let mut q = p.clone();
        for a in 0..3 {
            q.cerebellum_axes[a] *= self.cerebellum_scale[a];
            q.cerebellum_center[a] += self.cerebellum_shift[a];
            q.ventricle_start[a] += self.cerebellum_shift[a];
            q.ventricle_end[a] += self.cerebellum_shift[a];
        }
        q
    }

    fn bias_at(&self, p: [f64; 3]) -> f64 {
        let x = p.map(|v| v / 100.0);
        let b = &self.bias;
        (b[0] * x[0] + b[1] * x[1] + b[2] * x[2] + b[3] * x[0] * x[0] + b[4] * x[1] * x[1] + b[5] * x[2] * x[2]).exp()
    }
}

/// A synthetic T1 with its construction truth.
#[derive(Clone, Debug)]
pub struct Phantom<T> {
    pub t1: Volume<T>,
    /// `Region` codes per voxel.
    pub regions: LabelVolume,
    /// Whole-brain zone labels per voxel.
    pub zones: LabelVolume,
    /// Anatomy parameters after jitter.
    pub params: PhantomParams,
    pub placement: AffineTransform,
}

impl<T: Real> Phantom<T> {
    pub fn region_mask(&self, pred: impl Fn(Region) -> bool) -> Mask {
        let codes: Vec<u16> = ALL_REGIONS.iter().filter(|r| pred(**r)).map(|r| r.code()).collect();
        self.regions.mask_of_any(&codes)
    }

    pub fn brain_mask(&self) -> Mask {
        self.region_mask(Region::is_brain)
    }

    pub fn cerebellum_mask(&self) -> Mask {
        self.region_mask(Region::is_cerebellum)
    }
}

pub const ALL_REGIONS: [Region; 9] = [
    Region::Background,
    Region::Csf,
    Region::CerebrumWm,
    Region::CerebrumGm,
    Region::CerebellumWm,
    Region::CerebellumGm,
    Region::Stem,
    Region::Ventricle,
    Region::Neck,
];

/// Synthesises one head on the phantom grid. Deterministic given `seed`.
pub fn generate_phantom<T: Real>(params: &PhantomParams, jitter: &SubjectJitter, seed: u64) -> Result<Phantom<T>> {
    generate_phantom_on(params, jitter, seed, &params.geometry(), params.noise_sigma)
}

pub(crate) fn generate_phantom_on<T: Real>(
    params: &PhantomParams,
    jitter: &SubjectJitter,
    seed: u64,
    geom: &Geometry,
    noise_sigma: f64,
) -> Result<Phantom<T>> {
    params.validate()?;
    let anatomy = jitter.apply_to(params);
    anatomy.validate()?;
    let placement = jitter.placement();
    let to_anatomy = placement.inverse();
    let n = geom.len();
    let mut regions = Vec::with_capacity(n);
    let mut zones = Vec::with_capacity(n);
    let mut t1 = Vec::with_capacity(n);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, noise_sigma.max(0.0)).map_err(|e| Error::Config(e.to_string()))?;
    for idx in 0..n {
        let p = geom.index_to_world(idx);
        let q = to_anatomy.map_point(p);
        let r = anatomy.classify(q);
        regions.push(r.code());
        zones.push(anatomy.zone(q, r));
        let v = if r == Region::Background {
            0.0
        } else {
            let base = anatomy.intensity(r) * jitter.bias_at(p);
            let e = if noise_sigma > 0.0 { noise.sample(&mut rng) } else { 0.0 };
            (base + e).max(0.0)
        };
        t1.push(T::lit(v));
    }
    Ok(Phantom {
        t1: Volume::new(geom.clone(), t1)?,
        regions: LabelVolume::new(geom.clone(), regions)?,
        zones: LabelVolume::new(geom.clone(), zones)?,
        params: anatomy,
        placement,
    })
}
