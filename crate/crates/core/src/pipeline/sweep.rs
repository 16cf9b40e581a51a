use serde::{Deserialize, Serialize};

use super::classes::ClassMap;
use super::evaluate::evaluate;
use super::infer::{labels_from_probs, predict_probs, Thresholds};
use super::train::{prepare, train, LossHistory, TrainConfig};
use crate::error::{Error, Result};
use crate::nn::{Network, NetworkConfig};
use crate::par;
use crate::phantom::Phantom;
use crate::volume::{LabelMap, Volume, WindowSpec};

/// Window half-widths (rows) and thresholds (columns) to scan.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepGrid {
    pub windows: Vec<f64>,
    pub thresholds: Vec<f64>,
}

impl Default for SweepGrid {
    fn default() -> Self {
        Self {
            windows: (4..=10).map(|k| k as f64 * 10.0).collect(),
            thresholds: vec![0.75, 0.80, 0.85, 0.90, 0.95],
        }
    }
}

impl SweepGrid {
    pub fn validate(&self) -> Result<()> {
        if self.windows.is_empty() || self.thresholds.is_empty() {
            return Err(Error::InvalidParameter("empty sweep grid".into()));
        }
        for &w in &self.windows {
            WindowSpec::new(w)?;
        }
        if let Some(t) = self.thresholds.iter().find(|t| !(**t > 0.0 && **t < 1.0)) {
            return Err(Error::InvalidParameter(format!(
                "threshold {t} outside (0, 1)"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub network: NetworkConfig,
    /// The window field is replaced by each grid row.
    pub train: TrainConfig,
    pub classes: ClassMap,
    /// Organ whose scores fill the matrix and pick the optima.
    pub target_organ: u8,
}

/// A raw intensity volume with its organ labels.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledCase {
    pub volume: Volume,
    pub labels: LabelMap,
}

impl From<&Phantom> for LabeledCase {
    fn from(p: &Phantom) -> Self {
        Self {
            volume: p.volume.clone(),
            labels: p.labels.clone(),
        }
    }
}

/// Mean scores of one organ over the test set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrganMean {
    pub organ: u8,
    pub mean_dice: f64,
    /// Mean over cases where the distance is defined.
    pub mean_hd_mm: Option<f64>,
    pub hd_cases: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub window: f64,
    pub threshold: f64,
    /// Target organ scores.
    pub mean_dice: f64,
    pub mean_hd_mm: Option<f64>,
    pub hd_cases: usize,
    /// Every non-background organ of the class map.
    pub organs: Vec<OrganMean>,
}

/// Position and value of a selected cell.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CellRef {
    pub row: usize,
    pub col: usize,
    pub window: f64,
    pub threshold: f64,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub target_organ: u8,
    pub windows: Vec<f64>,
    pub thresholds: Vec<f64>,
    /// `cells[row][col]`: row per window, column per threshold.
    pub cells: Vec<Vec<SweepCell>>,
    /// Highest mean Dice; the first in row-major order on ties.
    pub best_by_dice: CellRef,
    /// Lowest defined mean HD; absent when no cell has one.
    pub best_by_hd: Option<CellRef>,
    /// Training curve of each window's network.
    pub histories: Vec<LossHistory>,
}

impl SweepReport {
    fn select(cells: &[Vec<SweepCell>], key: impl Fn(&SweepCell) -> Option<f64>, better: impl Fn(f64, f64) -> bool) -> Option<CellRef> {
        let mut best: Option<CellRef> = None;
        for (row, r) in cells.iter().enumerate() {
            for (col, c) in r.iter().enumerate() {
                if let Some(v) = key(c) {
                    if best.is_none_or(|b| better(v, b.value)) {
                        best = Some(CellRef { row, col, window: c.window, threshold: c.threshold, value: v });
                    }
                }
            }
        }
        best
    }

    pub fn cell(&self, window: f64, threshold: f64) -> Option<&SweepCell> {
        self.cells
            .iter()
            .flatten()
            .find(|c| c.window == window && c.threshold == threshold)
    }

    /// `rows = windows, columns = thresholds` matrix of one cell value.
    pub fn heatmap_csv(&self, value: impl Fn(&SweepCell) -> Option<f64>) -> Result<Vec<u8>> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["window".to_string()];
        header.extend(self.thresholds.iter().map(|t| t.to_string()));
        w.write_record(&header)?;
        for (row, cells) in self.windows.iter().zip(&self.cells) {
            let mut rec = vec![row.to_string()];
            rec.extend(cells.iter().map(|c| value(c).map(|v| v.to_string()).unwrap_or_default()));
            w.write_record(&rec)?;
        }
        w.into_inner().map_err(|e| Error::Io(e.into_error()))
    }

    pub fn dice_csv(&self) -> Result<Vec<u8>> {
        self.heatmap_csv(|c| Some(c.mean_dice))
    }

    pub fn hd_csv(&self) -> Result<Vec<u8>> {
        self.heatmap_csv(|c| c.mean_hd_mm)
    }
}

fn mean(v: &[f64]) -> Option<f64> {
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

fn sweep_row(
    window: f64,
    train_set: &[LabeledCase],
    test_set: &[LabeledCase],
    thresholds: &[f64],
    cfg: &SweepConfig,
) -> Result<(Vec<SweepCell>, LossHistory)> {
    let spec = WindowSpec::new(window)?;
    let dims = cfg.network.input_dims;
    let samples = train_set
        .iter()
        .map(|c| prepare(&c.volume, &c.labels, spec, &cfg.classes, dims))
        .collect::<Result<Vec<_>>>()?;
    // Every row starts from the same initial weights and draws the same
    // augmentation sequence, so rows differ only in the window.
    let tcfg = TrainConfig { window: spec, ..cfg.train.clone() };
    let (net, history) = train(Network::build(cfg.network.clone())?, &samples, &[], &tcfg)?;
    let probs = test_set
        .iter()
        .map(|c| predict_probs(&c.volume, &net, spec))
        .collect::<Result<Vec<_>>>()?;
    let organs = &cfg.classes.organs()[1..];
    let mut row = Vec::with_capacity(thresholds.len());
    for &t in thresholds {
        let th = Thresholds::uniform(t);
        let mut per_case = Vec::with_capacity(test_set.len());
        for (case, p) in test_set.iter().zip(&probs) {
            let pred = labels_from_probs(p, &cfg.classes, &th, &case.volume)?;
            per_case.push(evaluate(&pred, &case.labels, organs)?);
        }
        let means: Vec<OrganMean> = organs
            .iter()
            .enumerate()
            .map(|(k, &organ)| {
                let dices: Vec<f64> = per_case.iter().map(|r| r[k].dice).collect();
                let hds: Vec<f64> = per_case.iter().filter_map(|r| r[k].hd_mm).collect();
                OrganMean {
                    organ,
                    mean_dice: mean(&dices).unwrap_or(0.0),
                    mean_hd_mm: mean(&hds),
                    hd_cases: hds.len(),
                }
            })
            .collect();
        let target = means
            .iter()
            .find(|m| m.organ == cfg.target_organ)
            .expect("target organ checked against the class map");
        row.push(SweepCell {
            window,
            threshold: t,
            mean_dice: target.mean_dice,
            mean_hd_mm: target.mean_hd_mm,
            hd_cases: target.hd_cases,
            organs: means.clone(),
        });
    }
    Ok((row, history))
}

/// Trains one network per window and scores every threshold on its
/// probability maps. Windows run in parallel; the result does not depend
/// on scheduling.
pub fn sweep(
    train_set: &[LabeledCase],
    test_set: &[LabeledCase],
    grid: &SweepGrid,
    cfg: &SweepConfig,
) -> Result<SweepReport> {
    grid.validate()?;
    cfg.network.validate()?;
    cfg.train.validate()?;
    if train_set.is_empty() || test_set.is_empty() {
        return Err(Error::InvalidParameter("sweep needs training and test cases".into()));
    }
    if cfg.network.num_classes != cfg.classes.num_classes() {
        return Err(Error::InvalidParameter(format!(
            "network has {} classes but the class map lists {}",
            cfg.network.num_classes,
            cfg.classes.num_classes()
        )));
    }
    if cfg.target_organ == 0 || cfg.classes.class_of(cfg.target_organ).is_none() {
        return Err(Error::InvalidParameter(format!(
            "target organ {} is not a foreground class",
            cfg.target_organ
        )));
    }
    let rows = par::map_slice(&grid.windows, |&w| {
        sweep_row(w, train_set, test_set, &grid.thresholds, cfg)
    });
    let mut cells = Vec::with_capacity(rows.len());
    let mut histories = Vec::with_capacity(rows.len());
    for r in rows {
        let (row, h) = r?;
        cells.push(row);
        histories.push(h);
    }
    let best_by_dice = SweepReport::select(&cells, |c| Some(c.mean_dice), |a, b| a > b)
        .expect("grid is non-empty");
    let best_by_hd = SweepReport::select(&cells, |c| c.mean_hd_mm, |a, b| a < b);
    Ok(SweepReport {
        target_organ: cfg.target_organ,
        windows: grid.windows.clone(),
        thresholds: grid.thresholds.clone(),
        cells,
        best_by_dice,
        best_by_hd,
        histories,
    })
}
