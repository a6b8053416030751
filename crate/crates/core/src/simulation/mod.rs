//! Simulated postoperative damage with known ground truth on healthy
//! phantoms, and the batch harness that scores the pipeline on it.

mod batch;
mod deform;
mod inject;
mod spec;
mod voi;

pub use batch::{run_simulation_batch, BatchOutcome, CaseStatus, ManifestEntry, SubjectRecord};
pub use deform::random_deformation;
pub use inject::{inject_damage, map_atlas_to_healthy, simulate_case, AtlasMapping, Injection, SimulatedCase};
pub use spec::{DamageKind, SimulationSpec, VoiShape};
pub use voi::sample_damage_voi;
