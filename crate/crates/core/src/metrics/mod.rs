//! Overlap, distance, summary and dose metrics.

mod dose;
mod hausdorff;
mod overlap;
mod stats;

pub use dose::{dose_stats, DoseStats};
pub use hausdorff::{directed_hausdorff, hausdorff};
pub use overlap::dice;
pub use stats::{aggregate, Summary};
