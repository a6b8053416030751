use std::io::Write as _;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::inject::{map_atlas_to_healthy, simulate_case};
use super::spec::{DamageKind, SimulationSpec};
use super::voi::sample_damage_voi;
use crate::atlas::{generate_phantom, AtlasPair, SubjectJitter};
use crate::error::{Error, Result};
use crate::evaluation::{score_case, summarize, CaseResult, SummaryTable};
use crate::pipeline::{run_pipeline_on, PipelineConfig, SIZE_BIN_EDGES};
use crate::scalar::Real;
use crate::tissue::SegmentationAudit;
use crate::volume::nifti;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CaseStatus {
    Ok,
    /// The subject failed the atlas-mapping quality gate.
    Rejected,
    Failed,
}

/// One line of `manifest.jsonl`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub case_id: String,
    pub subject: usize,
    pub kind: DamageKind,
    pub target_volume_mm3: f64,
    /// Atlas-space GT VOI volume.
    pub achieved_volume_mm3: Option<f64>,
    pub detected_volume_mm3: Option<f64>,
    pub dice: Option<f64>,
    pub csf_mu: Option<f64>,
    pub status: CaseStatus,
    pub error: Option<String>,
    /// Case directory relative to the batch output directory.
    pub path: String,
}

#[derive(Clone, Debug)]
pub struct SubjectRecord {
    pub subject: usize,
    /// Damage found on the unmodified healthy phantom, mm³.
    pub healthy_damage_mm3: Option<f64>,
    pub gate_dice: Option<f64>,
    pub error: Option<String>,
}

/// Everything a batch produced; also written to disk.
#[derive(Clone, Debug)]
pub struct BatchOutcome {
    pub manifest: Vec<ManifestEntry>,
    pub results: Vec<CaseResult>,
    pub subjects: Vec<SubjectRecord>,
    pub summary: SummaryTable,
    /// Segmentation audit of every pipeline run, healthy runs included.
    pub audits: Vec<SegmentationAudit>,
}

fn derive_seed(base: u64, tag: u64, index: u64) -> u64 {
    ChaCha8Rng::seed_from_u64(base ^ tag.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ index.wrapping_mul(0xbf58_476d_1ce4_e5b9))
        .random()
}

/// Simulates damage on `n_subjects` phantoms, runs the pipeline on every
/// simulated image and scores it against the atlas-space GT.
///
/// Writes `manifest.jsonl`, `summary.csv` and one directory per case with
/// the simulated image, both GT masks, the detected mask and the report.
/// Case failures are recorded and the batch carries on.
pub fn run_simulation_batch<T: Real>(
    spec: &SimulationSpec,
    atlases: &AtlasPair<T>,
    config: &PipelineConfig,
    out_dir: impl AsRef<Path>,
) -> Result<BatchOutcome> {
    spec.validate()?;
    config.validate()?;
    let out_dir = out_dir.as_ref();
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let manifest_path = out_dir.join("manifest.jsonl");
    let mut manifest_file = std::fs::File::create(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
    let mut outcome = BatchOutcome {
        manifest: Vec::new(),
        results: Vec::new(),
        subjects: Vec::new(),
        summary: SummaryTable::default(),
        audits: Vec::new(),
    };
    let cb = &atlases.cerebellum;
    for subject in 0..spec.n_subjects {
        let sseed = derive_seed(spec.seed, 1, subject as u64);
        let healthy = (|| {
            let phantom = generate_phantom::<T>(&spec.phantom, &SubjectJitter::random(sseed), sseed)?;
            let out = run_pipeline_on(&phantom.t1, atlases, config, None)?;
            let init = cb
                .provenance
                .as_ref()
                .map(|p| out.isolation.affine.inverse().then_after(p));
            let mapping = map_atlas_to_healthy(
                &out.isolation.cerebellum,
                &out.isolation.mask,
                &out.segmentation,
                cb,
                &config.normalization,
                init.as_ref(),
                spec.quality_gate,
            );
            Ok::<_, Error>((out, mapping))
        })();
        let mut record = SubjectRecord {
            subject,
            healthy_damage_mm3: None,
            gate_dice: None,
            error: None,
        };
        let (healthy_out, mapping) = match healthy {
            Ok((out, Ok(m))) => {
                outcome.audits.push(out.segmentation.audit.clone());
                record.healthy_damage_mm3 = Some(out.report.volume_mm3);
                record.gate_dice = Some(m.dice);
                (Some(out), Ok(m))
            }
            Ok((out, Err(e))) => {
                outcome.audits.push(out.segmentation.audit.clone());
                record.healthy_damage_mm3 = Some(out.report.volume_mm3);
                if let Error::CaseRejected { dice, .. } = &e {
                    record.gate_dice = Some(*dice);
                }
                (None, Err(e))
            }
            Err(e) => (None, Err(e)),
        };
        if let Err(e) = &mapping {
            record.error = Some(e.to_string());
        }
        outcome.subjects.push(record);

        for d in 0..spec.damages_per_subject {
            let index = subject * spec.damages_per_subject + d;
            let case_id = format!("s{subject:03}_d{d:02}");
            let kind = spec.kind_of_case(index);
            let cseed = derive_seed(spec.seed, 2, index as u64);
            let mut rng = ChaCha8Rng::seed_from_u64(cseed);
            let (lo, hi) = spec.damage_volume_range_mm3;
            let target = (lo.ln() + rng.random::<f64>() * (hi.ln() - lo.ln())).exp();
            let rel = PathBuf::from(&case_id);
            let mut entry = ManifestEntry {
                case_id: case_id.clone(),
                subject,
                kind,
                target_volume_mm3: target,
                achieved_volume_mm3: None,
                detected_volume_mm3: None,
                dice: None,
                csf_mu: None,
                status: CaseStatus::Ok,
                error: None,
                path: rel.to_string_lossy().into_owned(),
            };
            match (&healthy_out, &mapping) {
                (Some(h), Ok(m)) => {
                    let case_dir = out_dir.join(&rel);
                    let res = (|| {
                        let voi = sample_damage_voi(kind, target, cb, &spec.voi, rng.random())?;
                        entry.achieved_volume_mm3 = Some(voi.volume_mm3());
                        let case = simulate_case(
                            &h.cropped,
                            &h.segmentation,
                            &m.atlas_to_native,
                            &voi,
                            kind,
                            target,
                            spec,
                            rng.random(),
                        )?;
                        entry.csf_mu = Some(case.csf_mu);
                        let run = run_pipeline_on(&case.simulated_t1, atlases, config, Some(&case.gt_voi_atlas))?;
                        outcome.audits.push(run.segmentation.audit.clone());
                        std::fs::create_dir_all(&case_dir).map_err(|e| Error::io(&case_dir, e))?;
                        nifti::save_nifti(&case.simulated_t1, case_dir.join("simulated_t1.nii.gz"))?;
                        nifti::save_mask(&case.gt_voi_atlas, case_dir.join("gt_atlas.nii.gz"))?;
                        nifti::save_mask(&case.gt_voi_native, case_dir.join("gt_native.nii.gz"))?;
                        if spec.save_intermediates {
                            run.save(case_dir.join("pipeline"))?;
                        }
                        nifti::save_mask(&run.report.damage_mask, case_dir.join("damage_mask.nii.gz"))?;
                        run.report.write_json(case_dir.join("report.json"))?;
                        entry.detected_volume_mm3 = Some(run.report.volume_mm3);
                        let scored = score_case(&run.report.damage_mask, &case.gt_voi_atlas)?
                            .with_id(case_id.clone())
                            .with_kind(kind);
                        entry.dice = Some(scored.dice);
                        Ok::<_, Error>(scored)
                    })();
                    match res {
                        Ok(r) => outcome.results.push(r),
                        Err(e) => {
                            entry.status = CaseStatus::Failed;
                            entry.error = Some(e.to_string());
                        }
                    }
                }
                (_, Err(e)) => {
                    entry.status = match e {
                        Error::CaseRejected { .. } => CaseStatus::Rejected,
                        _ => CaseStatus::Failed,
                    };
                    entry.error = Some(e.to_string());
                }
                (None, Ok(_)) => unreachable!("mapping exists only with a healthy run"),
            }
            let line = serde_json::to_string(&entry)?;
            writeln!(manifest_file, "{line}").map_err(|e| Error::io(&manifest_path, e))?;
            outcome.manifest.push(entry);
        }
    }
    outcome.summary = summarize(&outcome.results, &SIZE_BIN_EDGES, true)?;
    outcome.summary.write_csv(out_dir.join("summary.csv"))?;
    Ok(outcome)
}
