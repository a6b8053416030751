use super::params::{Metric, RegistrationParams, RegistrationReport};
use super::pyramid::{downsample, gradient};
use super::sampling::Stencil;
use super::transform::{jacobian_determinants, DeformationField};
use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::volume::{gaussian_smooth_vox, Geometry, Volume};

type Field = [Vec<f64>; 3];

const INVERSION_ITERATIONS: usize = 20;

#[derive(Clone, Debug)]
pub struct DiffeoRegistration {
    /// Fixed-to-moving pull-back field with its inverse attached.
    pub field: DeformationField,
    pub report: RegistrationReport,
    /// Share of fixed-foreground voxels whose forward Jacobian is positive.
    pub jacobian_positive_fraction: f64,
}

/// Symmetric diffeomorphic registration of `moving` onto `fixed`. Both must
/// already share the fixed grid (resample the moving image through its
/// affine first).
pub fn register_diffeomorphic<T: Real>(
    fixed: &Volume<T>,
    moving: &Volume<T>,
    params: &RegistrationParams,
) -> Result<DiffeoRegistration> {
    register_diffeomorphic_channels(std::slice::from_ref(fixed), std::slice::from_ref(moving), params)
}

/// Multi-channel variant; the metric is the unweighted sum over channels.
pub fn register_diffeomorphic_channels<T: Real>(
    fixed: &[Volume<T>],
    moving: &[Volume<T>],
    params: &RegistrationParams,
) -> Result<DiffeoRegistration> {
    params.validate()?;
    if fixed.is_empty() || fixed.len() != moving.len() {
        return Err(Error::Registration(format!(
            "need matching non-empty channel lists, got {} fixed and {} moving",
            fixed.len(),
            moving.len()
        )));
    }
    let geom = fixed[0].geometry().clone();
    for v in fixed.iter().chain(moving) {
        geom.check_same(v.geometry())?;
    }
    let n = geom.len();
    let mut foreground = vec![false; n];
    for ch in fixed {
        for (f, v) in foreground.iter_mut().zip(ch.data()) {
            *f |= v.as_f64() > 0.0;
        }
    }
    let prep = |v: &Volume<T>| -> Vec<f64> {
        let mut d: Vec<f64> = v.data().iter().map(|x| x.as_f64()).collect();
        if params.metric == Metric::NormalizedCrossCorrelation {
            standardize(&mut d);
        }
        d
    };
    let fixed: Vec<Vec<f64>> = fixed.iter().map(prep).collect();
    let moving: Vec<Vec<f64>> = moving.iter().map(prep).collect();

    let mut report = RegistrationReport::default();
    let mut fields: Option<(Field, Field, usize, [usize; 3])> = None;
    for (li, &factor) in params.levels.iter().enumerate() {
        let fl: Vec<Vec<f64>> = fixed.iter().map(|c| downsample(c, &geom, factor).0).collect();
        let ml: Vec<Vec<f64>> = moving.iter().map(|c| downsample(c, &geom, factor).0).collect();
        let dims = geom.downsample(factor).dims();
        let (a, b) = match fields.take() {
            None => (zero_field(dims), zero_field(dims)),
            Some((a, b, prev, pdims)) => (
                upsample(&a, pdims, prev, dims, factor),
                upsample(&b, pdims, prev, dims, factor),
            ),
        };
        let mut level = LevelRun::new(&fl, &ml, dims, a, b);
        let (trace, iters) = level.run(params, li)?;
        report.level_metrics.push(trace);
        report.iterations_run.push(iters);
        report.final_metric = level.metric;
        fields = Some((level.a, level.b, factor, dims));
    }
    let (mut a, mut b, factor, dims) = fields.expect("at least one level");
    if factor != 1 {
        a = upsample(&a, dims, factor, geom.dims(), 1);
        b = upsample(&b, dims, factor, geom.dims(), 1);
    }
    let dims = geom.dims();
    let ainv = invert(&a, dims);
    let binv = invert(&b, dims);
    let forward = to_world(&geom, compose(&b, &ainv, dims));
    let inverse = to_world(&geom, compose(&a, &binv, dims));

    let jac = jacobian_determinants(&geom, &forward);
    let (mut pos, mut tot) = (0usize, 0usize);
    let any_fg = foreground.iter().any(|&f| f);
    for (j, &fg) in jac.iter().zip(&foreground) {
        if fg || !any_fg {
            tot += 1;
            pos += (*j > 0.0) as usize;
        }
    }
    let field = DeformationField::from_components(geom.clone(), forward)?
        .with_inverse(DeformationField::from_components(geom, inverse)?);
    Ok(DiffeoRegistration {
        field,
        report,
        jacobian_positive_fraction: pos as f64 / tot.max(1) as f64,
    })
}

fn standardize(d: &mut [f64]) {
    let n = d.len() as f64;
    let mean = d.iter().sum::<f64>() / n;
    let var = d.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let sd = if var > 0.0 { var.sqrt() } else { 1.0 };
    d.iter_mut().for_each(|v| *v = (*v - mean) / sd);
}

fn zero_field(dims: [usize; 3]) -> Field {
    let n = dims.iter().product();
    [vec![0.0; n], vec![0.0; n], vec![0.0; n]]
}

#[inline]
fn ijk(dims: [usize; 3], idx: usize) -> [f64; 3] {
    let i = idx % dims[0];
    let j = (idx / dims[0]) % dims[1];
    let k = idx / (dims[0] * dims[1]);
    [i as f64, j as f64, k as f64]
}

fn warp(data: &[f64], dims: [usize; 3], u: &Field) -> Vec<f64> {
    (0..data.len())
        .map(|idx| {
            let p = ijk(dims, idx);
            let v = [p[0] + u[0][idx], p[1] + u[1][idx], p[2] + u[2][idx]];
            Stencil::clamped(dims, v).sample(data)
        })
        .collect()
}

/// Displacement of `(id + outer) ∘ (id + inner)`.
fn compose(outer: &Field, inner: &Field, dims: [usize; 3]) -> Field {
    let n = inner[0].len();
    let mut out = zero_field(dims);
    for idx in 0..n {
        let p = ijk(dims, idx);
        let d = [inner[0][idx], inner[1][idx], inner[2][idx]];
        let s = Stencil::clamped(dims, [p[0] + d[0], p[1] + d[1], p[2] + d[2]]);
        for c in 0..3 {
            out[c][idx] = d[c] + s.sample(&outer[c]);
        }
    }
    out
}

/// Fixed-point inverse `v(x) = -u(x + v(x))`.
fn invert(u: &Field, dims: [usize; 3]) -> Field {
    let n = u[0].len();
    let mut out = zero_field(dims);
    for idx in 0..n {
        let p = ijk(dims, idx);
        let mut v = [0.0; 3];
        for _ in 0..INVERSION_ITERATIONS {
            let s = Stencil::clamped(dims, [p[0] + v[0], p[1] + v[1], p[2] + v[2]]);
            let next = [-s.sample(&u[0]), -s.sample(&u[1]), -s.sample(&u[2])];
            let change = (0..3).map(|c| (next[c] - v[c]).abs()).fold(0.0, f64::max);
            v = next;
            if change < 1e-5 {
                break;
            }
        }
        for c in 0..3 {
            out[c][idx] = v[c];
        }
    }
    out
}

/// Resamples a voxel-unit field from a level with factor `from` to one with
/// factor `to`, rescaling displacements.
fn upsample(u: &Field, from_dims: [usize; 3], from: usize, to_dims: [usize; 3], to: usize) -> Field {
    let r = to as f64 / from as f64;
    let scale = 1.0 / r;
    let mut out = zero_field(to_dims);
    for idx in 0..out[0].len() {
        let p = ijk(to_dims, idx);
        let s = Stencil::clamped(from_dims, [p[0] * r, p[1] * r, p[2] * r]);
        for c in 0..3 {
            out[c][idx] = s.sample(&u[c]) * scale;
        }
    }
    out
}

fn to_world(geom: &Geometry, u: Field) -> Field {
    let lin = geom.linear();
    let mut out = u;
    for idx in 0..out[0].len() {
        let d = [out[0][idx], out[1][idx], out[2][idx]];
        for r in 0..3 {
            out[r][idx] = lin[(r, 0)] * d[0] + lin[(r, 1)] * d[1] + lin[(r, 2)] * d[2];
        }
    }
    out
}

fn smooth_field(u: &mut Field, dims: [usize; 3], sigma: f64) {
    if sigma > 0.0 {
        for c in u.iter_mut() {
            gaussian_smooth_vox(c, dims, [sigma; 3]);
        }
    }
}

fn metric(fw: &[Vec<f64>], mw: &[Vec<f64>]) -> f64 {
    let n = fw[0].len() as f64;
    let mut s = 0.0;
    for (f, m) in fw.iter().zip(mw) {
        s += f.iter().zip(m).map(|(a, b)| (b - a) * (b - a)).sum::<f64>();
    }
    s / n
}

/// Midpoint state on one pyramid level: `a` pulls the fixed image and `b`
/// the moving image into the shared middle space.
struct LevelRun<'a> {
    fixed: &'a [Vec<f64>],
    moving: &'a [Vec<f64>],
    dims: [usize; 3],
    a: Field,
    b: Field,
    fw: Vec<Vec<f64>>,
    mw: Vec<Vec<f64>>,
    metric: f64,
}

impl<'a> LevelRun<'a> {
    fn new(fixed: &'a [Vec<f64>], moving: &'a [Vec<f64>], dims: [usize; 3], a: Field, b: Field) -> Self {
        let fw: Vec<Vec<f64>> = fixed.iter().map(|c| warp(c, dims, &a)).collect();
        let mw: Vec<Vec<f64>> = moving.iter().map(|c| warp(c, dims, &b)).collect();
        let m = metric(&fw, &mw);
        LevelRun {
            fixed,
            moving,
            dims,
            a,
            b,
            fw,
            mw,
            metric: m,
        }
    }

    /// Demons forces for both half-maps, scaled by `step`.
    fn forces(&self, step: f64) -> (Field, Field) {
        let n = self.fw[0].len();
        let mut ua = zero_field(self.dims);
        let mut ub = zero_field(self.dims);
        let mut num_a = zero_field(self.dims);
        let mut num_b = zero_field(self.dims);
        let mut den_a = vec![0.0; n];
        let mut den_b = vec![0.0; n];
        let mut g = [Vec::new(), Vec::new(), Vec::new()];
        for (fw, mw) in self.fw.iter().zip(&self.mw) {
            gradient(fw, self.dims, &mut g);
            for idx in 0..n {
                let d = mw[idx] - fw[idx];
                let mut gg = 0.0;
                for c in 0..3 {
                    num_a[c][idx] += d * g[c][idx];
                    gg += g[c][idx] * g[c][idx];
                }
                den_a[idx] += gg + d * d;
            }
            gradient(mw, self.dims, &mut g);
            for idx in 0..n {
                let d = mw[idx] - fw[idx];
                let mut gg = 0.0;
                for c in 0..3 {
                    num_b[c][idx] += d * g[c][idx];
                    gg += g[c][idx] * g[c][idx];
                }
                den_b[idx] += gg + d * d;
            }
        }
        let half = 0.5 * step;
        for idx in 0..n {
            if den_a[idx] > 1e-12 {
                for c in 0..3 {
                    ua[c][idx] = half * num_a[c][idx] / den_a[idx];
                }
            }
            if den_b[idx] > 1e-12 {
                for c in 0..3 {
                    ub[c][idx] = -half * num_b[c][idx] / den_b[idx];
                }
            }
        }
        (ua, ub)
    }

    fn run(&mut self, params: &RegistrationParams, level: usize) -> Result<(Vec<f64>, usize)> {
        let mut trace = vec![self.metric];
        let max_step = params.step_length;
        let mut step = max_step;
        let mut rejections = 0;
        let mut iters = 0;
        while iters < params.iterations[level] {
            iters += 1;
            let (mut ua, mut ub) = self.forces(step);
            smooth_field(&mut ua, self.dims, params.update_sigma);
            smooth_field(&mut ub, self.dims, params.update_sigma);
            let mut a = compose(&self.a, &ua, self.dims);
            let mut b = compose(&self.b, &ub, self.dims);
            smooth_field(&mut a, self.dims, params.total_sigma);
            smooth_field(&mut b, self.dims, params.total_sigma);
            let fw: Vec<Vec<f64>> = self.fixed.iter().map(|c| warp(c, self.dims, &a)).collect();
            let mw: Vec<Vec<f64>> = self.moving.iter().map(|c| warp(c, self.dims, &b)).collect();
            let m = metric(&fw, &mw);
            if !m.is_finite() {
                return Err(Error::Registration(format!(
                    "diffeomorphic registration diverged at level {level}, iteration {iters}: metric {m}, last accepted {}",
                    self.metric
                )));
            }
            if m < self.metric {
                self.a = a;
                self.b = b;
                self.fw = fw;
                self.mw = mw;
                self.metric = m;
                trace.push(m);
                rejections = 0;
                step = (step * 1.2).min(max_step);
                let w = params.convergence_window;
                if trace.len() > w {
                    let old = trace[trace.len() - 1 - w];
                    if (old - m) / old.abs().max(1e-12) < params.tolerance {
                        break;
                    }
                }
            } else {
                rejections += 1;
                step *= 0.5;
                if rejections >= params.divergence_patience {
                    break;
                }
            }
        }
        Ok((trace, iters))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn phantom(dims: usize) -> Volume<f32> {
        let g = Geometry::centered([dims; 3], [2.0; 3], [0.0; 3]).unwrap();
        Volume::from_world_fn(g, |p| {
            let r = ((p[0] / 22.0).powi(2) + (p[1] / 18.0).powi(2) + (p[2] / 16.0).powi(2)).sqrt();
            if r < 0.5 {
                120.0
            } else if r < 1.0 {
                90.0
            } else {
                0.0
            }
        })
    }

    #[test]
    fn self_registration_is_near_identity() {
        let f = phantom(32);
        let r = register_diffeomorphic(&f, &f, &RegistrationParams::mean_squares()).unwrap();
        let mean = r.field.magnitudes().iter().sum::<f64>() / f.geometry().len() as f64;
        assert!(mean / 2.0 < 0.1, "mean displacement {mean} mm");
        assert!(r.jacobian_positive_fraction > 0.99);
    }

    #[test]
    fn forward_and_inverse_are_consistent() {
        let f = phantom(32);
        let m = f.map(|v| v);
        let g = f.geometry().clone();
        // shrink the moving blob slightly
        let m = Volume::from_world_fn(g, |p| {
            let q = [p[0] * 1.1, p[1] * 1.1, p[2] * 1.1];
            let v = f.geometry().to_voxel(q);
            crate::volume::sample_linear(m.data(), m.dims(), v).unwrap_or(0.0)
        });
        let r = register_diffeomorphic(&f, &m, &RegistrationParams::mean_squares()).unwrap();
        assert!(r.field.inverse_consistency_residual().unwrap() < 0.5);
        assert!(r.report.final_metric < r.report.level_metrics[0][0]);
        for lvl in &r.report.level_metrics {
            assert!(lvl.windows(2).all(|w| w[1] <= w[0]));
        }
    }
}
