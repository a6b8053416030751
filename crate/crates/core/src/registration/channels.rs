use crate::error::Result;
use crate::scalar::Real;
use crate::volume::{gaussian_smooth, LabelVolume, Volume};

/// One indicator volume per non-background label, ascending label order,
/// smoothed with `sigma_mm` (0 keeps exact indicators).
pub fn labels_to_channels<T: Real>(labels: &LabelVolume, sigma_mm: f64) -> Result<Vec<Volume<T>>> {
    let set: Vec<u16> = labels.labels().into_iter().filter(|&l| l != 0).collect();
    label_channels(labels, &set, sigma_mm)
}

/// Like [`labels_to_channels`] for an explicit label list, so two volumes
/// with different label content still give matching channels.
pub fn label_channels<T: Real>(labels: &LabelVolume, set: &[u16], sigma_mm: f64) -> Result<Vec<Volume<T>>> {
    let mut out = Vec::new();
    for &label in set {
        let ind: Volume<T> = labels.mask_of(label).to_volume::<T>().with_dtype(Default::default());
        out.push(if sigma_mm > 0.0 { gaussian_smooth(&ind, sigma_mm)? } else { ind });
    }
    Ok(out)
}

/// Unweighted sum of per-channel mean squared differences.
pub fn channel_metric<T: Real>(a: &[Volume<T>], b: &[Volume<T>]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| {
            let n = x.data().len() as f64;
            x.data()
                .iter()
                .zip(y.data())
                .map(|(p, q)| (p.as_f64() - q.as_f64()).powi(2))
                .sum::<f64>()
                / n
        })
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume::Geometry;

    fn labels() -> LabelVolume {
        let g = Geometry::new([8, 8, 8], [1.0; 3], [0.0; 3]).unwrap();
        let data = (0..512).map(|i| ((i / 7) % 4) as u16).collect();
        LabelVolume::new(g, data).unwrap()
    }

    #[test]
    fn exact_indicators_partition_foreground() {
        let ch: Vec<Volume<f64>> = labels_to_channels(&labels(), 0.0).unwrap();
        assert_eq!(ch.len(), 3);
        for idx in 0..512 {
            let s: f64 = ch.iter().map(|c| c.data()[idx]).sum();
            assert!(s <= 1.0 + 1e-6);
        }
    }

    #[test]
    fn single_label_is_smoothed_indicator() {
        let g = Geometry::new([9, 9, 9], [1.0; 3], [0.0; 3]).unwrap();
        let mut d = vec![0u16; 729];
        d[364] = 5;
        let lv = LabelVolume::new(g, d).unwrap();
        let ch: Vec<Volume<f64>> = labels_to_channels(&lv, 1.5).unwrap();
        let expect = gaussian_smooth(&lv.mask_of(5).to_volume::<f64>(), 1.5).unwrap();
        assert_eq!(ch.len(), 1);
        assert_eq!(ch[0].data(), expect.data());
    }
}
