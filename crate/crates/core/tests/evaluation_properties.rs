use proptest::prelude::*;

use cbdetect::evaluation::{accumulate_heatmaps, bin_index, score_case, summarize, CaseResult};
use cbdetect::pipeline::SIZE_BIN_EDGES;
use cbdetect::simulation::DamageKind;
use cbdetect::{Geometry, Mask};

fn grid() -> Geometry {
    Geometry::centered([6, 5, 4], [2.0, 2.0, 2.0], [0.0; 3]).unwrap()
}

fn mask() -> impl Strategy<Value = Mask> {
    prop::collection::vec(prop::bool::weighted(0.3), grid().len()).prop_map(|d| Mask::new(grid(), d).unwrap())
}

fn case() -> impl Strategy<Value = (CaseResult, f64, bool)> {
    (mask(), mask(), any::<bool>(), 0.0f64..30000.0, 0.0f64..1.0).prop_map(|(am, gt, ventricular, vol, d)| {
        let kind = if ventricular { DamageKind::Ventricular } else { DamageKind::Lateral };
        let mut r = score_case(&am, &gt).unwrap().with_kind(kind);
        // decouple the tabulated values from the tiny grid
        r.gt_volume_mm3 = vol;
        r.dice = d;
        (r, vol, ventricular)
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn fn_fp_set_identity(am in mask(), gt in mask()) {
        let r = score_case(&am, &gt).unwrap();
        let inter = am.intersection_count(&gt);
        prop_assert_eq!(r.fn_mask.count() + r.fp_mask.count() + 2 * inter, gt.count() + am.count());
        prop_assert!(r.fn_mask.is_subset_of(&gt) && r.fp_mask.is_subset_of(&am));
    }

    #[test]
    fn heatmap_totals_match_case_counts(pairs in prop::collection::vec((mask(), mask()), 1..12)) {
        let results: Vec<CaseResult> = pairs.iter().map(|(a, g)| score_case(a, g).unwrap()).collect();
        let (fnh, fph) = accumulate_heatmaps(&results).unwrap();
        prop_assert_eq!(fnh.total(), results.iter().map(|r| r.fn_mask.count() as u64).sum::<u64>());
        prop_assert_eq!(fph.total(), results.iter().map(|r| r.fp_mask.count() as u64).sum::<u64>());
        prop_assert!(fnh.max() as usize <= results.len());
        // order independence
        let mut rev = results.clone();
        rev.reverse();
        let (fnr, _) = accumulate_heatmaps(&rev).unwrap();
        prop_assert_eq!(fnr.counts(), fnh.counts());
    }

    #[test]
    fn summary_means_recompute(cases in prop::collection::vec(case(), 1..40)) {
        let results: Vec<CaseResult> = cases.iter().map(|c| c.0.clone()).collect();
        let table = summarize(&results, &SIZE_BIN_EDGES, true).unwrap();
        let labels = ["0-1000", "1000-3000", "3000-8000", "8000-20000", ">20000"];
        for (kind, want) in [("ventricular", Some(true)), ("lateral", Some(false)), ("all", None)] {
            let sel: Vec<&(CaseResult, f64, bool)> =
                cases.iter().filter(|c| want.is_none_or(|v| c.2 == v)).collect();
            for (b, label) in labels.iter().enumerate() {
                let d: Vec<f64> = sel.iter().filter(|c| bin_index(&SIZE_BIN_EDGES, c.1) == b).map(|c| c.0.dice).collect();
                match table.row(kind, label) {
                    None => prop_assert!(d.is_empty()),
                    Some(row) => {
                        prop_assert_eq!(row.n, d.len());
                        prop_assert_eq!(row.mean_dice, d.iter().sum::<f64>() / d.len() as f64);
                    }
                }
            }
            let d: Vec<f64> = sel.iter().map(|c| c.0.dice).collect();
            if let Some(row) = table.row(kind, "all") {
                prop_assert_eq!(row.n, d.len());
                prop_assert_eq!(row.mean_dice, d.iter().sum::<f64>() / d.len() as f64);
            } else {
                prop_assert!(d.is_empty());
            }
        }
    }
}

#[test]
fn bin_edges_go_up() {
    assert_eq!(bin_index(&SIZE_BIN_EDGES, 999.999), 0);
    assert_eq!(bin_index(&SIZE_BIN_EDGES, 1000.0), 1);
    assert_eq!(bin_index(&SIZE_BIN_EDGES, 20000.0), 4);
}

#[test]
fn empty_heatmap_list_is_an_error() {
    assert!(accumulate_heatmaps(&[]).is_err());
}
