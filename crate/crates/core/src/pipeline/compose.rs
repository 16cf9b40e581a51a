use crate::error::{Error, Result};
use crate::volume::{CropBox, LabelMap};

/// Pastes per-portion label maps back into a grid of `dims`.
///
/// Portions are applied in order; where they overlap, a later portion's
/// foreground overwrites earlier labels. Background never overwrites.
/// Portion voxels falling outside the grid are ignored.
pub fn compose_portions(
    dims: [usize; 3],
    spacing: [f64; 3],
    portions: &[(CropBox, LabelMap)],
) -> Result<LabelMap> {
    let mut out = LabelMap::filled(dims, spacing, 0)?;
    let whole = CropBox::full(dims);
    for (bx, labels) in portions {
        if bx.size() != labels.dims() {
            return Err(Error::InvalidParameter(format!(
                "portion box {:?} does not match label dims {:?}",
                bx.size(),
                labels.dims()
            )));
        }
        for (i, &v) in labels.data().iter().enumerate() {
            if v == 0 {
                continue;
            }
            let c = labels.coords(i);
            let p = [0, 1, 2].map(|a| bx.lo[a] + c[a] as i64);
            if whole.contains_point(p) {
                out.set(p[0] as usize, p[1] as usize, p[2] as usize, v)?;
            }
        }
    }
    Ok(out)
}
