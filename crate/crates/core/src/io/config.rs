use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::organs::{default_registry, OrganEntry};
use crate::error::{Error, Result};
use crate::nn::NetworkConfig;
use crate::phantom::PhantomParams;
use crate::pipeline::{ClassMap, SweepConfig, SweepGrid, TrainConfig};
use crate::volume::{CropBox, MAX_LABEL};

/// A named sub-volume trained and segmented on its own.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CropRegion {
    pub name: String,
    /// Voxel box in the source grid; may extend past the edges.
    pub bounds: CropBox,
    /// Organs expected inside the region.
    #[serde(default)]
    pub organs: Vec<u8>,
}

/// How many phantoms to generate and how to split them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetConfig {
    pub cases: usize,
    pub train_fraction: f64,
    pub val_fraction: f64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            cases: 50,
            train_fraction: 0.7,
            val_fraction: 0.1,
        }
    }
}

/// Everything a run needs, loaded from one JSON file. Unknown keys are
/// rejected. The top-level `seed` replaces the seeds of the nested
/// network and training sections.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub out_dir: PathBuf,
    pub phantom: PhantomParams,
    pub dataset: DatasetConfig,
    pub network: NetworkConfig,
    pub train: TrainConfig,
    pub grid: SweepGrid,
    pub classes: ClassMap,
    pub target_organ: u8,
    /// Threshold used by `segment` and `evaluate`.
    pub threshold: f64,
    pub crop_regions: Vec<CropRegion>,
    pub organs: Vec<OrganEntry>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            out_dir: PathBuf::from("out"),
            phantom: PhantomParams::default(),
            dataset: DatasetConfig::default(),
            network: NetworkConfig {
                num_classes: 5,
                ..NetworkConfig::default()
            },
            train: TrainConfig::default(),
            grid: SweepGrid::default(),
            classes: ClassMap::new(vec![0, 2, 3, 4, 5]).expect("valid class map"),
            target_organ: 4,
            threshold: 0.85,
            crop_regions: Vec::new(),
            organs: default_registry(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let mut cfg: RunConfig =
            serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.apply_seed(cfg.seed);
        cfg.validate()?;
        Ok(cfg)
    }

    /// Sets the run seed and propagates it to the nested sections.
    pub fn apply_seed(&mut self, seed: u64) {
        self.seed = seed;
        self.network.seed = seed;
        self.train.seed = seed;
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        self.network.validate().map_err(|e| Error::Config(e.to_string()))?;
        self.train.validate().map_err(|e| Error::Config(e.to_string()))?;
        self.grid.validate().map_err(|e| Error::Config(e.to_string()))?;
        self.phantom.validate().map_err(|e| Error::Config(e.to_string()))?;
        if self.network.num_classes != self.classes.num_classes() {
            return bad(format!(
                "network.num_classes is {} but classes lists {}",
                self.network.num_classes,
                self.classes.num_classes()
            ));
        }
        if self.target_organ == 0 || self.classes.class_of(self.target_organ).is_none() {
            return bad(format!("target_organ {} is not in classes", self.target_organ));
        }
        if !(0.0..=1.0).contains(&self.threshold) {
            return bad(format!("threshold {} outside [0, 1]", self.threshold));
        }
        let d = &self.dataset;
        if d.cases == 0
            || !(0.0..=1.0).contains(&d.train_fraction)
            || !(0.0..=1.0).contains(&d.val_fraction)
            || d.train_fraction + d.val_fraction > 1.0
        {
            return bad("dataset needs cases >= 1 and fractions summing to at most 1".into());
        }
        for r in &self.crop_regions {
            CropBox::new(r.bounds.lo, r.bounds.hi).map_err(|e| Error::Config(format!("{}: {e}", r.name)))?;
            if let Some(o) = r.organs.iter().find(|&&o| o > MAX_LABEL) {
                return bad(format!("{}: organ {o} out of range", r.name));
            }
        }
        if let Some(o) = self.organs.iter().find(|o| o.index == 0 || o.index > MAX_LABEL) {
            return bad(format!("registry index {} out of range", o.index));
        }
        Ok(())
    }

    pub fn sweep_config(&self) -> SweepConfig {
        SweepConfig {
            network: self.network.clone(),
            train: self.train.clone(),
            classes: self.classes.clone(),
            target_organ: self.target_organ,
        }
    }

    /// Registry name for an organ index, falling back to the built-in table.
    pub fn organ_name(&self, index: u8) -> String {
        self.organs
            .iter()
            .find(|o| o.index == index)
            .map(|o| o.name.clone())
            .unwrap_or_else(|| super::organ_name(index).to_string())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate_and_round_trip() {
        let cfg = RunConfig::default();
        cfg.validate().unwrap();
        let text = serde_json::to_string(&cfg).unwrap();
        assert_eq!(RunConfig::from_json(&text).unwrap(), cfg);
        assert_eq!(cfg.organs.len(), 20);
        assert_eq!(cfg.organ_name(4), "Left lens of the eye");
    }

    #[test]
    fn partial_file_fills_defaults() {
        let cfg = RunConfig::from_json(r#"{"seed": 7, "train": {"epochs": 3}}"#).unwrap();
        assert_eq!(cfg.train.epochs, 3);
        assert_eq!(cfg.train.steps_per_epoch, 35);
        assert_eq!(cfg.network.seed, 7);
    }

    #[test]
    fn rejects_unknown_and_inconsistent() {
        assert!(matches!(RunConfig::from_json(r#"{"sed": 1}"#), Err(Error::Config(_))));
        assert!(RunConfig::from_json(r#"{"train": {"epoch": 1}}"#).is_err());
        assert!(RunConfig::from_json(r#"{"classes": [0, 2]}"#).is_err());
        assert!(RunConfig::from_json(r#"{"classes": [1, 2]}"#).is_err());
        assert!(RunConfig::from_json(r#"{"grid": {"windows": [], "thresholds": [0.8]}}"#).is_err());
        let region = r#"{"crop_regions": [{"name": "a", "bounds": {"lo": [0,0,0], "hi": [0,1,1]}}]}"#;
        assert!(RunConfig::from_json(region).is_err());
    }
}
