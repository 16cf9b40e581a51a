//! Training, inference, evaluation and the window/threshold sweep.

mod boxes;
mod classes;
mod compose;
mod evaluate;
mod eye;
mod infer;
mod report;
mod sweep;
mod train;

pub use boxes::{bounding_box_of, merge_overlapping_boxes, BoundingBox};
pub use classes::ClassMap;
pub use compose::compose_portions;
pub use evaluate::{evaluate, OrganResult, OrganStats, SegReport};
pub use eye::{crop_around_organ, locate_and_crop_eye, EYE_BOX_MM};
pub use infer::{apply_threshold, labels_from_probs, predict_probs, segment, ProbabilityMaps, Thresholds};
pub use report::{write_history_csv, write_json};
pub use sweep::{sweep, CellRef, LabeledCase, OrganMean, SweepCell, SweepConfig, SweepGrid, SweepReport};
pub use train::{
    is_converged, prepare, train, Convergence, LossHistory, Sample, TrainConfig,
};
