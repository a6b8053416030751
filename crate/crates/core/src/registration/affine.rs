use nalgebra::{Matrix3, Matrix4, Rotation3, Vector3};

use super::params::{Metric, RegistrationParams, RegistrationReport};
use super::pyramid::{downsample, gradient};
use super::sampling::Stencil;
use super::transform::AffineTransform;
use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::volume::{Geometry, Volume};

const NPARAM: usize = 12;

/// Free parameters in each optimisation stage: translation, rigid, affine.
const STAGES: [usize; 3] = [3, 6, 12];

#[derive(Clone, Debug)]
pub struct AffineRegistration {
    pub transform: AffineTransform,
    pub report: RegistrationReport,
}

/// Affine registration initialised by centre-of-mass alignment.
pub fn register_affine<T: Real>(
    fixed: &Volume<T>,
    moving: &Volume<T>,
    params: &RegistrationParams,
) -> Result<AffineRegistration> {
    register_affine_from(fixed, moving, params, None)
}

/// Affine registration. With `init` the search starts from that transform
/// and centre-of-mass initialisation is skipped.
pub fn register_affine_from<T: Real>(
    fixed: &Volume<T>,
    moving: &Volume<T>,
    params: &RegistrationParams,
    init: Option<&AffineTransform>,
) -> Result<AffineRegistration> {
    params.validate()?;
    let (cf, rf) = center_of_mass(fixed)
        .ok_or_else(|| Error::Registration("fixed image has no positive foreground".into()))?;
    let (cm, _) = center_of_mass(moving)
        .ok_or_else(|| Error::Registration("moving image has no positive foreground".into()))?;
    let radius = rf.max(1.0);

    let (outer, mut theta) = match init {
        Some(a) => (a.clone(), [0.0; NPARAM]),
        None => {
            let mut th = [0.0; NPARAM];
            for a in 0..3 {
                th[a] = cm[a] - cf[a];
            }
            (AffineTransform::identity(), th)
        }
    };
    let model = Model {
        center: cf,
        outer: *outer.matrix(),
        scale: param_scales(radius),
    };

    let mut report = RegistrationReport::default();
    for (li, &factor) in params.levels.iter().enumerate() {
        let level = Level::build(fixed, moving, factor, params.max_samples);
        if li == 0 {
            let overlap = level.overlap(&model.matrix(&theta));
            if overlap == 0 {
                return Err(Error::Registration(
                    "no foreground overlap between fixed and moving after initialisation".into(),
                ));
            }
        }
        let mut trace = Vec::new();
        let mut iters = 0;
        for &nfree in &STAGES {
            let step0 = params.affine_step_mm * factor as f64;
            iters += optimise_stage(
                &level,
                &model,
                &mut theta,
                nfree,
                step0,
                params.iterations[li],
                params,
                &mut trace,
            );
        }
        report.level_metrics.push(trace);
        report.iterations_run.push(iters);
    }
    let full = Level::build(fixed, moving, 1, params.max_samples);
    report.final_metric = full.evaluate(&model.matrix(&theta), params.metric, false).0;
    let transform = AffineTransform::new(model.matrix(&theta))?;
    Ok(AffineRegistration { transform, report })
}

/// Intensity-weighted centre of mass over positive voxels and the radius of
/// gyration about it.
fn center_of_mass<T: Real>(vol: &Volume<T>) -> Option<([f64; 3], f64)> {
    let g = vol.geometry();
    let mut w = 0.0;
    let mut s = [0.0; 3];
    for (idx, v) in vol.data().iter().enumerate() {
        let v = v.as_f64();
        if v > 0.0 {
            let p = g.index_to_world(idx);
            w += v;
            for a in 0..3 {
                s[a] += v * p[a];
            }
        }
    }
    if w <= 0.0 {
        return None;
    }
    let c = s.map(|x| x / w);
    let mut r2 = 0.0;
    for (idx, v) in vol.data().iter().enumerate() {
        let v = v.as_f64();
        if v > 0.0 {
            let p = g.index_to_world(idx);
            r2 += v * ((p[0] - c[0]).powi(2) + (p[1] - c[1]).powi(2) + (p[2] - c[2]).powi(2));
        }
    }
    Some((c, (r2 / w).sqrt()))
}

/// Parameters: translation (mm), Euler angles (rad), log scales, shears.
/// Scaling makes a unit step move points at the radius of gyration by ~1 mm.
fn param_scales(radius: f64) -> [f64; NPARAM] {
    let mut s = [1.0 / radius; NPARAM];
    s[0] = 1.0;
    s[1] = 1.0;
    s[2] = 1.0;
    s
}

struct Model {
    center: [f64; 3],
    outer: Matrix4<f64>,
    scale: [f64; NPARAM],
}

impl Model {
    /// `outer ∘ (x -> L (x - c) + c + t)`.
    fn matrix(&self, th: &[f64; NPARAM]) -> Matrix4<f64> {
        let rot = Rotation3::from_euler_angles(th[3], th[4], th[5]);
        let scale = Matrix3::from_diagonal(&Vector3::new(th[6].exp(), th[7].exp(), th[8].exp()));
        let shear = Matrix3::new(1.0, th[9], th[10], 0.0, 1.0, th[11], 0.0, 0.0, 1.0);
        let lin = rot.matrix() * scale * shear;
        let c = Vector3::from(self.center);
        let t = c - lin * c + Vector3::new(th[0], th[1], th[2]);
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&lin);
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&t);
        self.outer * m
    }

    /// Jacobian of the 12 matrix entries with respect to scaled parameters,
    /// by central differences (no image access involved).
    fn entry_jacobian(&self, th: &[f64; NPARAM]) -> [[f64; 12]; NPARAM] {
        let mut jac = [[0.0; 12]; NPARAM];
        let h = 1e-6;
        for p in 0..NPARAM {
            let mut a = *th;
            let mut b = *th;
            a[p] += h * self.scale[p];
            b[p] -= h * self.scale[p];
            let (ma, mb) = (self.matrix(&a), self.matrix(&b));
            for r in 0..3 {
                for c in 0..4 {
                    jac[p][4 * r + c] = (ma[(r, c)] - mb[(r, c)]) / (2.0 * h);
                }
            }
        }
        jac
    }
}

/// One pyramid level: subsampled fixed points and the moving image packed
/// with its world-space gradient.
struct Level {
    points: Vec<[f64; 3]>,
    values: Vec<f64>,
    fixed_fg: Vec<bool>,
    moving: Vec<[f64; 4]>,
    mgeom: Geometry,
}

impl Level {
    fn build<T: Real>(fixed: &Volume<T>, moving: &Volume<T>, factor: usize, max_samples: usize) -> Level {
        let (fdata, fgeom) = downsample(fixed.data(), fixed.geometry(), factor);
        let (mdata, mgeom) = downsample(moving.data(), moving.geometry(), factor);
        let mdata: Vec<f64> = mdata.iter().map(|v| v.as_f64()).collect();

        let mut grads = [Vec::new(), Vec::new(), Vec::new()];
        gradient(&mdata, mgeom.dims(), &mut grads);
        let jinv = mgeom.linear().try_inverse().expect("valid geometry");
        let moving = (0..mdata.len())
            .map(|i| {
                let gv = Vector3::new(grads[0][i], grads[1][i], grads[2][i]);
                let gw = jinv.transpose() * gv;
                [mdata[i], gw[0], gw[1], gw[2]]
            })
            .collect();

        // sample the fixed foreground bounding box plus a margin
        let dims = fgeom.dims();
        let mut lo = dims;
        let mut hi = [0usize; 3];
        for (idx, v) in fdata.iter().enumerate() {
            if v.as_f64() > 0.0 {
                let ijk = fgeom.ijk(idx);
                for a in 0..3 {
                    lo[a] = lo[a].min(ijk[a]);
                    hi[a] = hi[a].max(ijk[a] + 1);
                }
            }
        }
        if hi[0] == 0 {
            lo = [0; 3];
            hi = dims;
        }
        let margin = 3;
        for a in 0..3 {
            lo[a] = lo[a].saturating_sub(margin);
            hi[a] = (hi[a] + margin).min(dims[a]);
        }
        let count: usize = (0..3).map(|a| hi[a] - lo[a]).product();
        let stride = ((count as f64 / max_samples.max(1) as f64).cbrt().ceil() as usize).max(1);
        let mut points = Vec::new();
        let mut values = Vec::new();
        let mut fixed_fg = Vec::new();
        for k in (lo[2]..hi[2]).step_by(stride) {
            for j in (lo[1]..hi[1]).step_by(stride) {
                for i in (lo[0]..hi[0]).step_by(stride) {
                    let v = fdata[fgeom.index(i, j, k)].as_f64();
                    points.push(fgeom.to_world([i as f64, j as f64, k as f64]));
                    values.push(v);
                    fixed_fg.push(v > 0.0);
                }
            }
        }
        Level {
            points,
            values,
            fixed_fg,
            moving,
            mgeom,
        }
    }

    fn sample(&self, m: &Matrix4<f64>, p: [f64; 3]) -> [f64; 4] {
        let y = m.transform_point(&nalgebra::Point3::from(p));
        let v = self.mgeom.to_voxel([y[0], y[1], y[2]]);
        match Stencil::inside(self.mgeom.dims(), v) {
            Some(s) => s.sample4(&self.moving),
            None => [0.0; 4],
        }
    }

    fn overlap(&self, m: &Matrix4<f64>) -> usize {
        self.points
            .iter()
            .zip(&self.fixed_fg)
            .filter(|(p, &fg)| fg && self.sample(m, **p)[0] > 0.0)
            .count()
    }

    /// Metric value (lower is better) and its gradient with respect to the
    /// 12 entries of the top three matrix rows.
    fn evaluate(&self, m: &Matrix4<f64>, metric: Metric, want_grad: bool) -> (f64, [f64; 12]) {
        let n = self.points.len() as f64;
        let samples: Vec<[f64; 4]> = self.points.iter().map(|&p| self.sample(m, p)).collect();
        let mut weights = vec![0.0; samples.len()];
        let value = match metric {
            Metric::MeanSquares => {
                let mut s = 0.0;
                for (k, smp) in samples.iter().enumerate() {
                    let d = smp[0] - self.values[k];
                    s += d * d;
                    weights[k] = 2.0 * d / n;
                }
                s / n
            }
            Metric::NormalizedCrossCorrelation => {
                let fm = self.values.iter().sum::<f64>() / n;
                let mm = samples.iter().map(|s| s[0]).sum::<f64>() / n;
                let (mut sfm, mut sff, mut smm) = (0.0, 0.0, 0.0);
                for (k, smp) in samples.iter().enumerate() {
                    let (f, g) = (self.values[k] - fm, smp[0] - mm);
                    sfm += f * g;
                    sff += f * f;
                    smm += g * g;
                }
                if sff <= 0.0 || smm <= 0.0 {
                    return (0.0, [0.0; 12]);
                }
                let den = (sff * smm).sqrt();
                let ncc = sfm / den;
                for (k, smp) in samples.iter().enumerate() {
                    let (f, g) = (self.values[k] - fm, smp[0] - mm);
                    weights[k] = -(f / den - ncc * g / smm);
                }
                -ncc
            }
        };
        let mut grad = [0.0; 12];
        if want_grad {
            for (k, smp) in samples.iter().enumerate() {
                let w = weights[k];
                if w == 0.0 {
                    continue;
                }
                let p = self.points[k];
                for r in 0..3 {
                    let g = w * smp[1 + r];
                    grad[4 * r] += g * p[0];
                    grad[4 * r + 1] += g * p[1];
                    grad[4 * r + 2] += g * p[2];
                    grad[4 * r + 3] += g;
                }
            }
        }
        (value, grad)
    }
}

/// Regular-step gradient descent over the first `nfree` parameters. Returns
/// the number of iterations run.
#[allow(clippy::too_many_arguments)]
fn optimise_stage(
    level: &Level,
    model: &Model,
    theta: &mut [f64; NPARAM],
    nfree: usize,
    step0: f64,
    max_iters: usize,
    params: &RegistrationParams,
    trace: &mut Vec<f64>,
) -> usize {
    let min_step = step0 * 1e-3;
    let mut step = step0;
    let (mut cur, mut egrad) = level.evaluate(&model.matrix(theta), params.metric, true);
    trace.push(cur);
    let start = trace.len() - 1;
    let mut iters = 0;
    while iters < max_iters && step >= min_step {
        iters += 1;
        let jac = model.entry_jacobian(theta);
        let mut g = [0.0; NPARAM];
        for p in 0..nfree {
            g[p] = (0..12).map(|e| jac[p][e] * egrad[e]).sum();
        }
        let norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
        if !(norm > 0.0 && norm.is_finite()) {
            break;
        }
        let mut cand = *theta;
        for p in 0..nfree {
            cand[p] -= step * g[p] / norm * model.scale[p];
        }
        let (v, eg) = level.evaluate(&model.matrix(&cand), params.metric, true);
        if v < cur {
            *theta = cand;
            cur = v;
            egrad = eg;
            trace.push(cur);
            let w = params.convergence_window;
            let len = trace.len();
            if len - start > w {
                let old = trace[len - 1 - w];
                if (old - cur) / old.abs().max(1e-12) < params.tolerance {
                    break;
                }
            }
        } else {
            step *= 0.5;
        }
    }
    iters
}
