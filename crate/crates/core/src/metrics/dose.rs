use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume::{BinaryMask, Volume};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DoseStats {
    pub max_gy: f64,
    pub mean_gy: f64,
    pub voxels: usize,
}

/// Maximum and mean dose over the voxels of a structure.
pub fn dose_stats(dose: &Volume, mask: &BinaryMask) -> Result<DoseStats> {
    dose.same_grid(mask)?;
    let mut max = f64::NEG_INFINITY;
    let mut sum = 0.0;
    let mut n = 0usize;
    for (&d, &m) in dose.data().iter().zip(mask.data()) {
        if m {
            let d = f64::from(d);
            max = max.max(d);
            sum += d;
            n += 1;
        }
    }
    if n == 0 {
        return Err(Error::EmptyMask("dose to structure"));
    }
    Ok(DoseStats {
        max_gy: max,
        mean_gy: sum / n as f64,
        voxels: n,
    })
}
