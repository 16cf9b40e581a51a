use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Mean and sample standard deviation (n - 1 denominator) of a set of cases.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    /// Absent for a single case.
    pub std: Option<f64>,
    pub n: usize,
}

pub fn aggregate(values: &[f64]) -> Result<Summary> {
    if values.is_empty() {
        return Err(Error::InvalidParameter("cannot aggregate zero cases".into()));
    }
    let n = values.len();
    let mean = values.iter().sum::<f64>() / n as f64;
    let std = (n >= 2).then(|| {
        let ss: f64 = values.iter().map(|v| (v - mean).powi(2)).sum();
        (ss / (n - 1) as f64).sqrt()
    });
    Ok(Summary { mean, std, n })
}
