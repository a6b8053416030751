use nalgebra::{DMatrix, DVector};

use super::config::CropParams;
use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::volume::{median, multi_otsu_thresholds, otsu_threshold, Mask, Volume};

/// Removes neck and lower head: keeps the top `fov_height_mm` of the Otsu
/// foreground along the inferior-superior axis and crops to the foreground
/// bounding box plus a margin.
pub fn crop_fov<T: Real>(input: &Volume<T>, params: &CropParams) -> Result<Volume<T>> {
    let geom = input.geometry();
    let t = otsu_threshold(input.data())
        .ok_or_else(|| Error::Preprocessing("image is constant; no foreground to crop to".into()))?;
    let mut fg = input.threshold(T::lit(t));
    let top = fg
        .data()
        .iter()
        .enumerate()
        .filter(|(_, &b)| b)
        .map(|(idx, _)| geom.index_to_world(idx)[2])
        .fold(f64::NEG_INFINITY, f64::max);
    if !top.is_finite() {
        return Err(Error::Preprocessing("empty foreground".into()));
    }
    let cutoff = top - params.fov_height_mm;
    let below: Vec<bool> = (0..geom.len()).map(|idx| geom.index_to_world(idx)[2] < cutoff).collect();
    for (f, &b) in fg.data_mut().iter_mut().zip(&below) {
        *f &= !b;
    }
    let (lo, hi) = fg
        .bounding_box()
        .ok_or_else(|| Error::Preprocessing("empty foreground".into()))?;
    let dims = geom.dims();
    let m = params.margin_vox;
    let lo = [0, 1, 2].map(|a| lo[a].saturating_sub(m));
    let hi = [0, 1, 2].map(|a| (hi[a] + m).min(dims[a]));
    let mut out = input.clone();
    for (v, &b) in out.data_mut().iter_mut().zip(&below) {
        if b {
            *v = T::zero();
        }
    }
    out.crop(lo, hi)
}

/// Max fit points; the in-mask voxels are strided down to this many.
const MAX_FIT_POINTS: usize = 60_000;
/// Cauchy weight constant in units of the robust residual scale.
const CAUCHY_C: f64 = 2.385;

/// Multiplicative bias correction with a smooth polynomial field.
///
/// Log-intensity inside `mask` is modelled as a per-tissue constant (three
/// intensity classes from a multi-level Otsu split of the current corrected
/// values) plus a degree-`degree` polynomial of position. The polynomial is
/// refitted `iterations` times by weighted least squares with Cauchy
/// weights on the residuals. The divided-out field is scaled so the in-mask
/// mean intensity is unchanged.
pub fn bias_correct<T: Real>(input: &Volume<T>, mask: &Mask, degree: usize, iterations: usize) -> Result<Volume<T>> {
    input.geometry().check_same(mask.geometry())?;
    if !(1..=4).contains(&degree) {
        return Err(Error::Config(format!("bias field degree {degree} outside 1..=4")));
    }
    let geom = input.geometry();
    let points: Vec<usize> = (0..geom.len())
        .filter(|&i| mask.data()[i] && input.data()[i].as_f64() > 0.0)
        .collect();
    if points.is_empty() {
        return Err(Error::Preprocessing("bias mask holds no positive voxels".into()));
    }
    let frame = CoordFrame::new(geom, &points);
    let stride = points.len().div_ceil(MAX_FIT_POINTS);
    let fit_idx: Vec<usize> = points.iter().copied().step_by(stride).collect();
    let logs: Vec<f64> = fit_idx.iter().map(|&i| input.data()[i].as_f64().ln()).collect();
    let coords: Vec<[f64; 3]> = fit_idx.iter().map(|&i| frame.normalize(geom.index_to_world(i))).collect();

    let coeffs = match fit_field(&coords, &logs, degree, iterations) {
        Some(c) => (degree, c),
        None => match fit_field(&coords, &logs, 1, iterations) {
            Some(c) => (1, c),
            None => return Err(Error::Preprocessing("bias field normal equations are singular".into())),
        },
    };
    let terms = monomials(coeffs.0);
    let eval = |p: [f64; 3]| -> f64 { terms.iter().zip(coeffs.1.iter()).map(|(e, c)| c * term(e, p)).sum() };

    // Clamp extrapolation outside the mask to the in-mask field range.
    let in_mask: Vec<f64> = points.iter().map(|&i| eval(frame.normalize(geom.index_to_world(i)))).collect();
    let lo = in_mask.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = in_mask.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let log_mean = in_mask.iter().sum::<f64>() / in_mask.len() as f64;
    let data: Vec<T> = (0..geom.len())
        .map(|i| {
            let f = (eval(frame.normalize(geom.index_to_world(i))).clamp(lo, hi) - log_mean).exp();
            T::lit(input.data()[i].as_f64() / f)
        })
        .collect();
    let mut out = Volume::new(geom.clone(), data)?.with_dtype(input.dtype());
    let before = input.mean_in(mask).unwrap_or(0.0);
    let after = out.mean_in(mask).unwrap_or(0.0);
    if after > 0.0 {
        let s = before / after;
        for v in out.data_mut() {
            *v = T::lit(v.as_f64() * s);
        }
    }
    Ok(out)
}

struct CoordFrame {
    center: [f64; 3],
    half: [f64; 3],
}

impl CoordFrame {
    fn new(geom: &crate::volume::Geometry, points: &[usize]) -> Self {
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for &i in points {
            let p = geom.index_to_world(i);
            for a in 0..3 {
                lo[a] = lo[a].min(p[a]);
                hi[a] = hi[a].max(p[a]);
            }
        }
        CoordFrame {
            center: [0, 1, 2].map(|a| 0.5 * (lo[a] + hi[a])),
            half: [0, 1, 2].map(|a| 0.5 * (hi[a] - lo[a])),
        }
    }

    /// Maps the mask bounding box to [-1, 1]; flat axes collapse to 0.
    fn normalize(&self, p: [f64; 3]) -> [f64; 3] {
        [0, 1, 2].map(|a| if self.half[a] > 0.0 { (p[a] - self.center[a]) / self.half[a] } else { 0.0 })
    }
}

fn monomials(degree: usize) -> Vec<[u32; 3]> {
    let mut v = Vec::new();
    for total in 0..=degree as u32 {
        for a in (0..=total).rev() {
            for b in (0..=total - a).rev() {
                v.push([a, b, total - a - b]);
            }
        }
    }
    v
}

#[inline]
fn term(e: &[u32; 3], p: [f64; 3]) -> f64 {
    p[0].powi(e[0] as i32) * p[1].powi(e[1] as i32) * p[2].powi(e[2] as i32)
}

/// Robust piecewise-constant-plus-polynomial fit; `None` when singular.
fn fit_field(coords: &[[f64; 3]], logs: &[f64], degree: usize, iterations: usize) -> Option<Vec<f64>> {
    let terms = monomials(degree);
    let m = terms.len();
    let basis: Vec<Vec<f64>> = coords.iter().map(|&p| terms.iter().map(|e| term(e, p)).collect()).collect();
    let mut coeffs = vec![0.0; m];
    let field = |c: &[f64], row: &[f64]| -> f64 { row.iter().zip(c).map(|(a, b)| a * b).sum() };
    for _ in 0..iterations {
        let corrected: Vec<f64> = logs.iter().zip(&basis).map(|(l, row)| l - field(&coeffs, row)).collect();
        let class_of = class_split(&corrected);
        let targets: Vec<f64> = logs.iter().zip(&class_of.1).map(|(l, &c)| l - class_of.0[c]).collect();
        let resid: Vec<f64> = targets.iter().zip(&basis).map(|(y, row)| y - field(&coeffs, row)).collect();
        let abs: Vec<f64> = resid.iter().map(|r| r.abs()).collect();
        let scale = (1.4826 * median(&abs).unwrap_or(0.0)).max(1e-6);
        let c = CAUCHY_C * scale;
        let mut ata = DMatrix::<f64>::zeros(m, m);
        let mut aty = DVector::<f64>::zeros(m);
        for ((row, y), r) in basis.iter().zip(&targets).zip(&resid) {
            let w = 1.0 / (1.0 + (r / c).powi(2));
            for i in 0..m {
                let wi = w * row[i];
                aty[i] += wi * y;
                for j in i..m {
                    ata[(i, j)] += wi * row[j];
                }
            }
        }
        for i in 0..m {
            for j in 0..i {
                ata[(i, j)] = ata[(j, i)];
            }
        }
        // Reject near-singular systems relative to the largest diagonal.
        let diag_max = (0..m).map(|i| ata[(i, i)]).fold(0.0, f64::max);
        let chol = ata.clone().cholesky()?;
        let lmin = (0..m).map(|i| chol.l_dirty()[(i, i)].powi(2)).fold(f64::INFINITY, f64::min);
        if !(lmin > 1e-10 * diag_max) {
            return None;
        }
        coeffs = chol.solve(&aty).iter().copied().collect();
    }
    Some(coeffs)
}

/// Three-class split of `values`: class means and per-value class index.
fn class_split(values: &[f64]) -> (Vec<f64>, Vec<usize>) {
    let cls: Vec<usize> = match multi_otsu_thresholds(values) {
        Some((t1, t2)) => values
            .iter()
            .map(|&v| if v <= t1 { 0 } else if v <= t2 { 1 } else { 2 })
            .collect(),
        None => vec![0; values.len()],
    };
    let mut sum = [0.0; 3];
    let mut n = [0usize; 3];
    for (&v, &c) in values.iter().zip(&cls) {
        sum[c] += v;
        n[c] += 1;
    }
    let means = (0..3).map(|c| if n[c] > 0 { sum[c] / n[c] as f64 } else { 0.0 }).collect();
    (means, cls)
}
