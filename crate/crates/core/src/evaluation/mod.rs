//! Scoring against ground truth, FN/FP heatmaps, binned summary tables and
//! slice renders.

mod render;
mod score;
mod summary;

pub use render::{overlay_image, render_overlay, Overlay, Plane};
pub use score::{accumulate_heatmaps, score_case, CaseRecord, CaseResult, Heatmap};
pub use summary::{bin_index, bin_labels, summarize, SummaryRow, SummaryTable};
