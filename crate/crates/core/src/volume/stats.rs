use crate::scalar::Real;

const BINS: usize = 256;

fn histogram<T: Real>(values: &[T]) -> Option<(Vec<f64>, f64, f64)> {
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for v in values {
        let v = v.as_f64();
        if v.is_finite() {
            lo = lo.min(v);
            hi = hi.max(v);
        }
    }
    if !(hi > lo) {
        return None;
    }
    let mut h = vec![0.0; BINS];
    let w = (hi - lo) / BINS as f64;
    for v in values {
        let v = v.as_f64();
        if v.is_finite() {
            let b = (((v - lo) / w) as usize).min(BINS - 1);
            h[b] += 1.0;
        }
    }
    Some((h, lo, w))
}

/// Otsu threshold over a 256-bin histogram: the value maximising the
/// between-class variance. Returns `None` when all values are equal.
pub fn otsu_threshold<T: Real>(values: &[T]) -> Option<f64> {
    let (h, lo, w) = histogram(values)?;
    let total: f64 = h.iter().sum();
    let sum_all: f64 = h.iter().enumerate().map(|(i, c)| i as f64 * c).sum();
    let (mut w0, mut s0) = (0.0, 0.0);
    let mut best = (f64::NEG_INFINITY, 0usize);
    for (t, &c) in h.iter().enumerate().take(BINS - 1) {
        w0 += c;
        s0 += t as f64 * c;
        let w1 = total - w0;
        if w0 == 0.0 || w1 == 0.0 {
            continue;
        }
        let m0 = s0 / w0;
        let m1 = (sum_all - s0) / w1;
        let between = w0 * w1 * (m0 - m1) * (m0 - m1);
        if between > best.0 {
            best = (between, t);
        }
    }
    Some(lo + (best.1 + 1) as f64 * w)
}

/// Two-threshold Otsu splitting values into three classes.
pub fn multi_otsu_thresholds<T: Real>(values: &[T]) -> Option<(f64, f64)> {
    let (h, lo, w) = histogram(values)?;
    // prefix sums of counts and first moments
    let mut pc = vec![0.0; BINS + 1];
    let mut pm = vec![0.0; BINS + 1];
    for i in 0..BINS {
        pc[i + 1] = pc[i] + h[i];
        pm[i + 1] = pm[i] + i as f64 * h[i];
    }
    let class = |a: usize, b: usize| {
        let n = pc[b] - pc[a];
        if n > 0.0 {
            let m = pm[b] - pm[a];
            Some(m * m / n)
        } else {
            None
        }
    };
    let mut best = (f64::NEG_INFINITY, 0, 0);
    for t1 in 1..BINS - 1 {
        let Some(c0) = class(0, t1) else { continue };
        for t2 in t1 + 1..BINS {
            let (Some(c1), Some(c2)) = (class(t1, t2), class(t2, BINS)) else { continue };
            let s = c0 + c1 + c2;
            if s > best.0 {
                best = (s, t1, t2);
            }
        }
    }
    (best.1 > 0).then_some((lo + best.1 as f64 * w, lo + best.2 as f64 * w))
}

/// Linear-interpolated percentile, `q` in [0, 100].
pub fn percentile<T: Real>(values: &[T], q: f64) -> Option<f64> {
    let mut v: Vec<f64> = values.iter().map(|x| x.as_f64()).filter(|x| x.is_finite()).collect();
    if v.is_empty() {
        return None;
    }
    v.sort_by(|a, b| a.total_cmp(b));
    let pos = (q.clamp(0.0, 100.0) / 100.0) * (v.len() - 1) as f64;
    let i = pos.floor() as usize;
    let f = pos - i as f64;
    Some(if i + 1 < v.len() { v[i] * (1.0 - f) + v[i + 1] * f } else { v[i] })
}

pub fn median<T: Real>(values: &[T]) -> Option<f64> {
    percentile(values, 50.0)
}
