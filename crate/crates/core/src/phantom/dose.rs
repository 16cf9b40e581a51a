//! Toy dose grids: sums of exponentially attenuated parallel beams.

use serde::{Deserialize, Serialize};

use super::PhantomGeometry;
use crate::volume::{Axis, Volume};

/// Face through which a beam enters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BeamEntry {
    /// Enters at index 0 and travels towards increasing index.
    Low,
    High,
}

/// Rectangle in the two axes perpendicular to a beam, in mm, listed in
/// increasing axis order (for a beam along y: `[x, z]`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FieldRect {
    pub lo: [f64; 2],
    pub hi: [f64; 2],
}

impl FieldRect {
    fn contains(&self, u: f64, v: f64) -> bool {
        self.lo[0] <= u && u <= self.hi[0] && self.lo[1] <= v && v <= self.hi[1]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Beam {
    pub axis: Axis,
    pub entry: BeamEntry,
    /// Open field; `None` irradiates the whole cross-section.
    pub field: Option<FieldRect>,
    /// Dose at zero depth in Gy.
    pub dose_gy: f64,
    pub attenuation_per_mm: f64,
    /// Collimator blocks inside the field.
    #[serde(default)]
    pub blocks: Vec<FieldRect>,
    /// Fraction of the dose passing a block.
    #[serde(default)]
    pub block_transmission: f64,
}

fn perpendicular(axis: Axis) -> (usize, usize) {
    match axis {
        Axis::X => (1, 2),
        Axis::Y => (0, 2),
        Axis::Z => (0, 1),
    }
}

/// Dose on a grid as the sum of all beams; depth is measured in mm from the
/// entry face to each voxel centre.
pub fn generate_dose_grid(dims: [usize; 3], spacing: [f64; 3], beams: &[Beam]) -> crate::Result<Volume> {
    let mut dose = vec![0.0f64; dims.iter().product()];
    for beam in beams {
        let a = beam.axis.index();
        let (u, v) = perpendicular(beam.axis);
        let n = dims[a];
        let mut i = 0;
        for z in 0..dims[2] {
            for y in 0..dims[1] {
                for x in 0..dims[0] {
                    let idx = [x, y, z];
                    let pu = idx[u] as f64 * spacing[u];
                    let pv = idx[v] as f64 * spacing[v];
                    let open = beam.field.is_none_or(|f| f.contains(pu, pv));
                    if open {
                        let k = match beam.entry {
                            BeamEntry::Low => idx[a],
                            BeamEntry::High => n - 1 - idx[a],
                        };
                        let depth = (k as f64 + 0.5) * spacing[a];
                        let mut d = beam.dose_gy * (-beam.attenuation_per_mm * depth).exp();
                        if beam.blocks.iter().any(|b| b.contains(pu, pv)) {
                            d *= beam.block_transmission;
                        }
                        dose[i] += d.max(0.0);
                    }
                    i += 1;
                }
            }
        }
    }
    Volume::new(dims, spacing, dose.into_iter().map(|d| d as f32).collect())
}

/// Parallel-opposed lateral beams (along x from both sides), optionally
/// with a collimator block over the projection of every lens.
pub fn lateral_opposed_beams(
    geometry: &PhantomGeometry,
    dose_per_beam_gy: f64,
    attenuation_per_mm: f64,
    block_lenses: bool,
    margin_mm: f64,
) -> Vec<Beam> {
    let blocks: Vec<FieldRect> = if block_lenses {
        geometry
            .eyes
            .iter()
            .map(|e| {
                let c = e.lens_center_mm;
                let r = e.lens_semi_axes_mm;
                FieldRect {
                    lo: [c[1] - r[1] - margin_mm, c[2] - r[2] - margin_mm],
                    hi: [c[1] + r[1] + margin_mm, c[2] + r[2] + margin_mm],
                }
            })
            .collect()
    } else {
        Vec::new()
    };
    [BeamEntry::Low, BeamEntry::High]
        .into_iter()
        .map(|entry| Beam {
            axis: Axis::X,
            entry,
            field: None,
            dose_gy: dose_per_beam_gy,
            attenuation_per_mm,
            blocks: blocks.clone(),
            block_transmission: 0.05,
        })
        .collect()
}
