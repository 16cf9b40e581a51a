use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::io::organ_name;
use crate::metrics::{aggregate, dice, hausdorff};
use crate::volume::LabelMap;

/// Dice and Hausdorff distance of one organ in one case.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OrganResult {
    pub organ: u8,
    pub dice: f64,
    /// Absent when either mask is empty.
    pub hd_mm: Option<f64>,
}

/// Per-organ Dice and Hausdorff distance of `pred` against `gt`.
pub fn evaluate(pred: &LabelMap, gt: &LabelMap, organs: &[u8]) -> Result<Vec<OrganResult>> {
    pred.same_grid(gt)?;
    organs
        .iter()
        .map(|&organ| {
            let p = pred.mask_of(organ);
            let g = gt.mask_of(organ);
            let hd_mm = if p.count() > 0 && g.count() > 0 {
                Some(hausdorff(&p, &g)?)
            } else {
                None
            };
            Ok(OrganResult {
                organ,
                dice: dice(&p, &g)?,
                hd_mm,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrganStats {
    pub organ: u8,
    pub name: String,
    pub cases: usize,
    pub dice_mean: f64,
    pub dice_std: Option<f64>,
    /// Number of cases with a defined Hausdorff distance.
    pub hd_cases: usize,
    pub hd_mean_mm: Option<f64>,
    pub hd_std_mm: Option<f64>,
}

/// Dataset-level summary: mean and sample standard deviation per organ.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegReport {
    pub organs: Vec<OrganStats>,
}

impl SegReport {
    /// Aggregates per-case results; every case must list the same organs.
    pub fn from_cases(cases: &[Vec<OrganResult>]) -> Result<Self> {
        let Some(first) = cases.first() else {
            return Ok(Self { organs: Vec::new() });
        };
        let mut organs = Vec::with_capacity(first.len());
        for (k, r) in first.iter().enumerate() {
            let mut dices = Vec::with_capacity(cases.len());
            let mut hds = Vec::new();
            for case in cases {
                let c = case.get(k).filter(|c| c.organ == r.organ).ok_or_else(|| {
                    crate::Error::InvalidParameter("cases list different organs".into())
                })?;
                dices.push(c.dice);
                hds.extend(c.hd_mm);
            }
            let d = aggregate(&dices)?;
            let h = if hds.is_empty() { None } else { Some(aggregate(&hds)?) };
            organs.push(OrganStats {
                organ: r.organ,
                name: organ_name(r.organ).to_string(),
                cases: cases.len(),
                dice_mean: d.mean,
                dice_std: d.std,
                hd_cases: hds.len(),
                hd_mean_mm: h.map(|s| s.mean),
                hd_std_mm: h.and_then(|s| s.std),
            });
        }
        Ok(Self { organs })
    }

    pub fn organ(&self, organ: u8) -> Option<&OrganStats> {
        self.organs.iter().find(|o| o.organ == organ)
    }

    /// One row per organ.
    pub fn to_csv(&self) -> Result<Vec<u8>> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record([
            "organ", "name", "cases", "dice_mean", "dice_std", "hd_cases", "hd_mean_mm", "hd_std_mm",
        ])?;
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for o in &self.organs {
            w.write_record([
                o.organ.to_string(),
                o.name.clone(),
                o.cases.to_string(),
                o.dice_mean.to_string(),
                opt(o.dice_std),
                o.hd_cases.to_string(),
                opt(o.hd_mean_mm),
                opt(o.hd_std_mm),
            ])?;
        }
        w.into_inner().map_err(|e| crate::Error::Io(e.into_error()))
    }
}
