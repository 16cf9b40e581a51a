use serde::{Deserialize, Serialize};

use super::{Grid, LabelMap, Voxel};
use crate::error::{Error, Result};

/// Half-open voxel box `lo..hi`; coordinates may lie outside the volume.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CropBox {
    pub lo: [i64; 3],
    pub hi: [i64; 3],
}

impl CropBox {
    pub fn new(lo: [i64; 3], hi: [i64; 3]) -> Result<Self> {
        if (0..3).any(|a| lo[a] >= hi[a]) {
            return Err(Error::InvalidParameter(format!(
                "degenerate box {lo:?}..{hi:?}"
            )));
        }
        Ok(Self { lo, hi })
    }

    /// The box covering a whole grid.
    pub fn full(dims: [usize; 3]) -> Self {
        Self {
            lo: [0; 3],
            hi: dims.map(|d| d as i64),
        }
    }

    pub fn size(&self) -> [usize; 3] {
        [0, 1, 2].map(|a| (self.hi[a] - self.lo[a]) as usize)
    }

    pub fn voxel_count(&self) -> usize {
        self.size().iter().product()
    }

    /// Whether two boxes share at least one voxel.
    pub fn intersects(&self, other: &CropBox) -> bool {
        (0..3).all(|a| self.lo[a] < other.hi[a] && other.lo[a] < self.hi[a])
    }

    pub fn contains(&self, other: &CropBox) -> bool {
        (0..3).all(|a| self.lo[a] <= other.lo[a] && other.hi[a] <= self.hi[a])
    }

    pub fn contains_point(&self, p: [i64; 3]) -> bool {
        (0..3).all(|a| self.lo[a] <= p[a] && p[a] < self.hi[a])
    }

    /// Smallest box containing both.
    pub fn union(&self, other: &CropBox) -> CropBox {
        CropBox {
            lo: [0, 1, 2].map(|a| self.lo[a].min(other.lo[a])),
            hi: [0, 1, 2].map(|a| self.hi[a].max(other.hi[a])),
        }
    }

    /// The box expressed relative to an enclosing box's origin.
    pub fn translate(&self, by: [i64; 3]) -> CropBox {
        CropBox {
            lo: [0, 1, 2].map(|a| self.lo[a] + by[a]),
            hi: [0, 1, 2].map(|a| self.hi[a] + by[a]),
        }
    }

    /// Whether the box lies within `0..dims` on every axis.
    pub fn within(&self, dims: [usize; 3]) -> bool {
        (0..3).all(|a| self.lo[a] >= 0 && self.hi[a] <= dims[a] as i64)
    }
}

/// Extracts `bx` from `vol`, filling voxels outside the source with `pad`.
pub fn crop<T: Voxel>(vol: &Grid<T>, bx: &CropBox, pad: T) -> Result<Grid<T>> {
    let bx = CropBox::new(bx.lo, bx.hi)?;
    let dims = vol.dims();
    if !bx.intersects(&CropBox::full(dims)) {
        return Err(Error::CropOutside {
            lo: bx.lo,
            hi: bx.hi,
            dims,
        });
    }
    let size = bx.size();
    let mut out = Vec::with_capacity(bx.voxel_count());
    for z in bx.lo[2]..bx.hi[2] {
        for y in bx.lo[1]..bx.hi[1] {
            let row_inside =
                z >= 0 && (z as usize) < dims[2] && y >= 0 && (y as usize) < dims[1];
            for x in bx.lo[0]..bx.hi[0] {
                if row_inside && x >= 0 && (x as usize) < dims[0] {
                    out.push(vol.get(x as usize, y as usize, z as usize));
                } else {
                    out.push(pad);
                }
            }
        }
    }
    Grid::new(size, vol.spacing(), out)
}

/// Voxel extent of a physical box: `round(extent_mm / spacing)`, at least 1.
pub fn mm_extent_voxels(extent_mm: [f64; 3], spacing: [f64; 3]) -> Result<[usize; 3]> {
    if extent_mm.iter().any(|&e| !(e.is_finite() && e > 0.0)) {
        return Err(Error::InvalidParameter(format!(
            "box extent {extent_mm:?} mm must be positive"
        )));
    }
    // f64::round rounds half away from zero.
    Ok([0, 1, 2].map(|a| ((extent_mm[a] / spacing[a]).round() as usize).max(1)))
}

/// A box of `extent_mm` centred on `center`, shifted (and if necessary
/// shrunk) to fit inside `dims` while staying as close to `center` as the
/// bounds allow.
pub fn mm_box_around(
    center: [usize; 3],
    extent_mm: [f64; 3],
    spacing: [f64; 3],
    dims: [usize; 3],
) -> Result<CropBox> {
    let n = mm_extent_voxels(extent_mm, spacing)?;
    let mut lo = [0i64; 3];
    let mut hi = [0i64; 3];
    for a in 0..3 {
        let d = dims[a] as i64;
        let len = (n[a] as i64).min(d);
        let mut l = center[a] as i64 - len / 2;
        l = l.clamp(0, d - len);
        lo[a] = l;
        hi[a] = l + len;
    }
    CropBox::new(lo, hi)
}

/// Mean voxel coordinate of `class`, rounded to the nearest voxel.
pub fn center_of_mass(mask: &LabelMap, class: u8) -> Result<[usize; 3]> {
    let mut sum = [0u64; 3];
    let mut n = 0u64;
    for (i, &v) in mask.data().iter().enumerate() {
        if v == class {
            let c = mask.coords(i);
            for a in 0..3 {
                sum[a] += c[a] as u64;
            }
            n += 1;
        }
    }
    if n == 0 {
        return Err(Error::EmptyClass(class));
    }
    Ok(sum.map(|s| (s as f64 / n as f64).round() as usize))
}
