use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::classes::ClassMap;
use crate::error::{Error, Result};
use crate::nn::{Network, Tensor4};
use crate::volume::{resample, resample_labels, window_normalize, LabelMap, Volume, WindowSpec};

/// Per-class probability maps on one grid.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbabilityMaps {
    pub probs: Tensor4,
    pub spacing: [f64; 3],
}

/// Classification threshold, optionally overridden for individual classes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Thresholds {
    pub default: f64,
    #[serde(default)]
    pub per_class: BTreeMap<usize, f64>,
}

impl Thresholds {
    pub fn uniform(t: f64) -> Self {
        Self {
            default: t,
            per_class: BTreeMap::new(),
        }
    }

    pub fn with_override(mut self, class: usize, t: f64) -> Self {
        self.per_class.insert(class, t);
        self
    }

    pub fn for_class(&self, class: usize) -> f64 {
        self.per_class.get(&class).copied().unwrap_or(self.default)
    }

    pub fn validate(&self) -> Result<()> {
        for &t in std::iter::once(&self.default).chain(self.per_class.values()) {
            if !(0.0..=1.0).contains(&t) {
                return Err(Error::InvalidParameter(format!(
                    "threshold {t} outside [0, 1]"
                )));
            }
        }
        Ok(())
    }
}

/// Per voxel: the most probable class (ties to the lowest index) if its
/// probability exceeds its threshold, otherwise background. Returns class
/// indices.
pub fn apply_threshold(maps: &ProbabilityMaps, t: &Thresholds) -> Result<LabelMap> {
    t.validate()?;
    let p = &maps.probs;
    let classes = p.channels();
    if classes > u8::MAX as usize {
        return Err(Error::InvalidParameter(format!("{classes} classes")));
    }
    let cut: Vec<f64> = (0..classes).map(|c| t.for_class(c)).collect();
    let n = p.voxels();
    let data = p.data();
    let out: Vec<u8> = (0..n)
        .map(|v| {
            let mut best = 0;
            let mut best_p = data[v];
            for c in 1..classes {
                let q = data[c * n + v];
                if q > best_p {
                    best = c;
                    best_p = q;
                }
            }
            if best != 0 && best_p > cut[best] {
                best as u8
            } else {
                0
            }
        })
        .collect();
    LabelMap::new(p.dims(), maps.spacing, out)
}

/// Windows `vol`, resamples it to the network input grid and runs inference.
pub fn predict_probs(vol: &Volume, net: &Network, window: WindowSpec) -> Result<ProbabilityMaps> {
    let dims = net.input_shape().dims;
    let input = resample(&window_normalize(vol, window)?, dims)?;
    Ok(ProbabilityMaps {
        probs: net.forward(&Tensor4::from_volume(&input))?,
        spacing: input.spacing(),
    })
}

/// Thresholds network-grid probabilities and maps the organ labels back onto
/// the grid of `source`.
pub fn labels_from_probs(
    maps: &ProbabilityMaps,
    classes: &ClassMap,
    t: &Thresholds,
    source: &Volume,
) -> Result<LabelMap> {
    if maps.probs.channels() != classes.num_classes() {
        return Err(Error::InvalidParameter(format!(
            "network has {} classes but the class map lists {}",
            maps.probs.channels(),
            classes.num_classes()
        )));
    }
    let organs = classes.to_organs(&apply_threshold(maps, t)?);
    let back = resample_labels(&organs, source.dims())?;
    LabelMap::new(source.dims(), source.spacing(), back.into_data())
}

/// Full inference: window, resample, forward, threshold, resample back.
pub fn segment(
    vol: &Volume,
    net: &Network,
    classes: &ClassMap,
    window: WindowSpec,
    t: &Thresholds,
) -> Result<LabelMap> {
    labels_from_probs(&predict_probs(vol, net, window)?, classes, t, vol)
}
