use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Kernel width used when the samples have no spread.
pub const FALLBACK_BANDWIDTH: f64 = 1.0;

/// Tabulation extends this many bandwidths past the sample range.
const TABLE_REACH: f64 = 6.0;

const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// Gaussian kernel density estimate with a tabulated fast path.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DensityModel {
    samples: Vec<f64>,
    bandwidth: f64,
    #[serde(skip)]
    table: Option<Table>,
}

#[derive(Clone, Debug)]
struct Table {
    start: f64,
    step: f64,
    values: Vec<f64>,
}

impl DensityModel {
    pub fn bandwidth(&self) -> f64 {
        self.bandwidth
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Exact density at `x`.
    pub fn density(&self, x: f64) -> f64 {
        let h = self.bandwidth;
        let lo = self.samples.partition_point(|&s| s < x - TABLE_REACH * h);
        let hi = self.samples.partition_point(|&s| s <= x + TABLE_REACH * h);
        let mut s = 0.0;
        for &xi in &self.samples[lo..hi] {
            let z = (x - xi) / h;
            s += (-0.5 * z * z).exp();
        }
        s * INV_SQRT_2PI / (h * self.samples.len() as f64)
    }

    /// Tabulates the density on a grid with spacing `bandwidth * fraction`;
    /// `eval_fast` then interpolates linearly.
    pub fn tabulate(mut self, fraction: f64) -> Self {
        let h = self.bandwidth;
        let step = h * fraction.clamp(1e-3, 0.25);
        let start = self.samples[0] - TABLE_REACH * h;
        let end = self.samples[self.samples.len() - 1] + TABLE_REACH * h;
        let n = ((end - start) / step).ceil() as usize + 2;
        let values = (0..n).map(|i| self.density(start + i as f64 * step)).collect();
        self.table = Some(Table { start, step, values });
        self
    }

    /// Tabulated density when available, otherwise exact.
    #[inline]
    pub fn eval_fast(&self, x: f64) -> f64 {
        match &self.table {
            None => self.density(x),
            Some(t) => {
                let u = (x - t.start) / t.step;
                if !(u >= 0.0) || u >= (t.values.len() - 1) as f64 {
                    return 0.0;
                }
                let i = u as usize;
                let f = u - i as f64;
                t.values[i] * (1.0 - f) + t.values[i + 1] * f
            }
        }
    }
}

/// Gaussian KDE with Silverman's bandwidth `0.9 min(σ, IQR/1.34) n^(-1/5)`.
pub fn kde_fit(samples: &[f64]) -> Result<DensityModel> {
    if samples.is_empty() {
        return Err(Error::Model("cannot fit a density to zero samples".into()));
    }
    if samples.iter().any(|v| !v.is_finite()) {
        return Err(Error::Model("samples contain non-finite values".into()));
    }
    let mut s = samples.to_vec();
    s.sort_by(f64::total_cmp);
    let bandwidth = silverman(&s).unwrap_or(FALLBACK_BANDWIDTH);
    Ok(DensityModel {
        samples: s,
        bandwidth,
        table: None,
    })
}

pub fn kde_eval(model: &DensityModel, x: f64) -> f64 {
    model.density(x)
}

fn silverman(sorted: &[f64]) -> Option<f64> {
    let n = sorted.len();
    if n < 2 {
        return None;
    }
    let (_, var) = super::mcd::mean_var(sorted);
    let sd = (var * n as f64 / (n - 1) as f64).sqrt();
    let q = |p: f64| {
        let pos = p * (n - 1) as f64;
        let i = pos.floor() as usize;
        let f = pos - i as f64;
        if i + 1 < n {
            sorted[i] * (1.0 - f) + sorted[i + 1] * f
        } else {
            sorted[i]
        }
    };
    let iqr = q(0.75) - q(0.25);
    let spread = if iqr > 0.0 { sd.min(iqr / 1.34) } else { sd };
    let h = 0.9 * spread * (n as f64).powf(-0.2);
    (h > 0.0 && h.is_finite()).then_some(h)
}
