use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::simulation::DamageKind;
use crate::volume::{dice, Geometry, Mask, Volume};

#[derive(Clone, Debug)]
pub struct CaseResult {
    pub case_id: String,
    pub dice: f64,
    pub gt_volume_mm3: f64,
    pub kind: Option<DamageKind>,
    /// GT voxels the detection missed.
    pub fn_mask: Mask,
    /// Detected voxels outside the GT.
    pub fp_mask: Mask,
}

/// Dice of the automatic mask against the GT with the FN/FP masks.
/// Two empty masks score 1.
pub fn score_case(am: &Mask, gt: &Mask) -> Result<CaseResult> {
    Ok(CaseResult {
        case_id: String::new(),
        dice: dice(am, gt)?,
        gt_volume_mm3: gt.volume_mm3(),
        kind: None,
        fn_mask: gt.and_not(am)?,
        fp_mask: am.and_not(gt)?,
    })
}

impl CaseResult {
    pub fn with_id(mut self, id: impl Into<String>) -> Self {
        self.case_id = id.into();
        self
    }

    pub fn with_kind(mut self, kind: DamageKind) -> Self {
        self.kind = Some(kind);
        self
    }

    pub fn record(&self) -> CaseRecord {
        CaseRecord {
            case_id: self.case_id.clone(),
            dice: self.dice,
            gt_volume_mm3: self.gt_volume_mm3,
            kind: self.kind,
            fn_voxels: self.fn_mask.count(),
            fp_voxels: self.fp_mask.count(),
        }
    }
}

/// JSON form of a [`CaseResult`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CaseRecord {
    pub case_id: String,
    pub dice: f64,
    pub gt_volume_mm3: f64,
    pub kind: Option<DamageKind>,
    pub fn_voxels: usize,
    pub fp_voxels: usize,
}

/// Voxelwise case counts on the atlas grid.
#[derive(Clone, Debug, PartialEq)]
pub struct Heatmap {
    geom: Geometry,
    counts: Vec<u32>,
}

impl Heatmap {
    pub fn zeros(geom: Geometry) -> Self {
        let counts = vec![0; geom.len()];
        Heatmap { geom, counts }
    }

    pub fn add(&mut self, mask: &Mask) -> Result<()> {
        self.geom.check_same(mask.geometry())?;
        for (c, &m) in self.counts.iter_mut().zip(mask.data()) {
            *c += m as u32;
        }
        Ok(())
    }

    pub fn geometry(&self) -> &Geometry {
        &self.geom
    }

    pub fn counts(&self) -> &[u32] {
        &self.counts
    }

    pub fn max(&self) -> u32 {
        self.counts.iter().copied().max().unwrap_or(0)
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().map(|&c| c as u64).sum()
    }

    pub fn to_volume(&self) -> Volume<f32> {
        Volume::new(self.geom.clone(), self.counts.iter().map(|&c| c as f32).collect()).expect("heatmap geometry")
    }
}

/// Sums of the FN and of the FP masks over all cases.
pub fn accumulate_heatmaps(results: &[CaseResult]) -> Result<(Heatmap, Heatmap)> {
    let first = results
        .first()
        .ok_or_else(|| Error::Config("no case results to accumulate".into()))?;
    let mut fn_map = Heatmap::zeros(first.fn_mask.geometry().clone());
    let mut fp_map = Heatmap::zeros(first.fp_mask.geometry().clone());
    for r in results {
        fn_map.add(&r.fn_mask)?;
        fp_map.add(&r.fp_mask)?;
    }
    Ok((fn_map, fp_map))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn g() -> Geometry {
        Geometry::new([10, 10, 10], [1.0; 3], [0.0; 3]).unwrap()
    }

    fn first_n(n: usize, offset: usize) -> Mask {
        let mut m = Mask::empty(g());
        for i in offset..offset + n {
            m.data_mut()[i] = true;
        }
        m
    }

    #[test]
    fn identical_masks() {
        let m = first_n(40, 0);
        let r = score_case(&m, &m).unwrap();
        assert_eq!(r.dice, 1.0);
        assert!(r.fn_mask.is_empty() && r.fp_mask.is_empty());
    }

    #[test]
    fn empty_detection() {
        let gt = first_n(40, 0);
        let r = score_case(&Mask::empty(g()), &gt).unwrap();
        assert_eq!(r.dice, 0.0);
        assert_eq!(r.fn_mask, gt);
    }

    #[test]
    fn hand_counted_case() {
        // |GT| 100, |AM| 150, overlap 75
        let gt = first_n(100, 0);
        let am = first_n(150, 25);
        let r = score_case(&am, &gt).unwrap();
        assert!((r.dice - 0.6).abs() < 1e-12);
        assert_eq!(r.fn_mask.count(), 25);
        assert_eq!(r.fp_mask.count(), 75);
    }

    #[test]
    fn heatmaps_count_cases() {
        let gt = first_n(30, 0);
        let am = first_n(30, 10);
        let a = score_case(&am, &gt).unwrap();
        let (fn1, fp1) = accumulate_heatmaps(std::slice::from_ref(&a)).unwrap();
        assert_eq!(fn1.counts().iter().filter(|&&c| c == 1).count(), a.fn_mask.count());
        assert_eq!(fp1.total(), a.fp_mask.count() as u64);
        let (fn2, _) = accumulate_heatmaps(&[a.clone(), a]).unwrap();
        assert_eq!(fn2.max(), 2);
        assert!(fn2.counts()[0] == 2 && fn2.counts()[20] == 0);
    }
}
