//! Whole-brain and cerebellum atlas bundles and the synthetic phantom family.

mod bundle;
mod phantom;

pub use bundle::{
    generate_synthetic_atlas_pair, label, prepare_cerebellum_atlas, prepare_whole_brain_atlas, AtlasBundle, AtlasKind,
    AtlasPair, WholeBrainOptions,
};
pub use phantom::{generate_phantom, zone, Phantom, PhantomParams, Region, SubjectJitter, ALL_REGIONS};
