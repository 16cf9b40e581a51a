use super::{Grid, LabelMap, Volume, Voxel};
use crate::error::{Error, Result};
use crate::par;

/// Slack for sample points that land a rounding error outside the grid.
pub(crate) const EDGE_EPS: f64 = 1e-9;

/// `a + (b - a) t`, kept inside `[min(a, b), max(a, b)]` so that nested
/// interpolation never leaves the bracket of its inputs and reproduces
/// constants exactly.
#[inline]
pub(crate) fn lerp(a: f64, b: f64, t: f64) -> f64 {
    let v = a + (b - a) * t;
    v.clamp(a.min(b), a.max(b))
}

/// Lower neighbour, upper neighbour and fraction for a coordinate already
/// clamped to `[0, n - 1]`.
#[inline]
fn cell(p: f64, n: usize) -> (usize, usize, f64) {
    let i0 = (p.floor() as usize).min(n - 1);
    if i0 + 1 >= n {
        (i0, i0, 0.0)
    } else {
        (i0, i0 + 1, p - i0 as f64)
    }
}

/// Trilinear sample at a continuous voxel coordinate, or `None` outside.
#[inline]
pub(crate) fn sample_trilinear(vol: &Volume, p: [f64; 3]) -> Option<f64> {
    let dims = vol.dims();
    let mut c = [(0usize, 0usize, 0.0f64); 3];
    for a in 0..3 {
        let hi = (dims[a] - 1) as f64;
        if p[a] < -EDGE_EPS || p[a] > hi + EDGE_EPS {
            return None;
        }
        c[a] = cell(p[a].clamp(0.0, hi), dims[a]);
    }
    Some(trilinear_at(vol, c))
}

#[inline]
fn trilinear_at(vol: &Volume, c: [(usize, usize, f64); 3]) -> f64 {
    let [(x0, x1, fx), (y0, y1, fy), (z0, z1, fz)] = c;
    let g = |x, y, z| f64::from(vol.get(x, y, z));
    let c00 = lerp(g(x0, y0, z0), g(x1, y0, z0), fx);
    let c10 = lerp(g(x0, y1, z0), g(x1, y1, z0), fx);
    let c01 = lerp(g(x0, y0, z1), g(x1, y0, z1), fx);
    let c11 = lerp(g(x0, y1, z1), g(x1, y1, z1), fx);
    lerp(lerp(c00, c10, fy), lerp(c01, c11, fy), fz)
}

/// Nearest-voxel lookup at a continuous coordinate, or `None` outside.
#[inline]
pub(crate) fn sample_nearest<T: Voxel>(vol: &Grid<T>, p: [f64; 3]) -> Option<T> {
    let dims = vol.dims();
    let mut idx = [0usize; 3];
    for a in 0..3 {
        let hi = (dims[a] - 1) as f64;
        if p[a] < -EDGE_EPS || p[a] > hi + EDGE_EPS {
            return None;
        }
        idx[a] = (p[a].clamp(0.0, hi).round() as usize).min(dims[a] - 1);
    }
    Some(vol.get(idx[0], idx[1], idx[2]))
}

/// Source coordinate of target voxel `j` when `n` source voxels and `m`
/// target voxels span the same physical extent (voxel-centre convention).
#[inline]
fn source_coord(j: usize, n: usize, m: usize) -> f64 {
    let p = (j as f64 + 0.5) * (n as f64 / m as f64) - 0.5;
    p.clamp(0.0, (n - 1) as f64)
}

fn target_geometry(dims: [usize; 3], spacing: [f64; 3], target: [usize; 3]) -> Result<[f64; 3]> {
    if target.contains(&0) {
        return Err(Error::InvalidParameter(format!(
            "resample target {target:?} must be >= 1 on every axis"
        )));
    }
    Ok([0, 1, 2].map(|a| spacing[a] * dims[a] as f64 / target[a] as f64))
}

/// Trilinear resampling onto `target` voxels covering the same physical extent.
pub fn resample(vol: &Volume, target: [usize; 3]) -> Result<Volume> {
    let dims = vol.dims();
    if dims == target {
        return Ok(vol.clone());
    }
    let spacing = target_geometry(dims, vol.spacing(), target)?;
    let axes: [Vec<(usize, usize, f64)>; 3] = [0, 1, 2].map(|a| {
        (0..target[a])
            .map(|j| cell(source_coord(j, dims[a], target[a]), dims[a]))
            .collect()
    });
    let slice = target[0] * target[1];
    let mut out = vec![0f32; slice * target[2]];
    par::for_each_chunk_mut(&mut out, slice, |z, plane| {
        for y in 0..target[1] {
            for x in 0..target[0] {
                let v = trilinear_at(vol, [axes[0][x], axes[1][y], axes[2][z]]);
                plane[x + target[0] * y] = v as f32;
            }
        }
    });
    Volume::new(target, spacing, out)
}

/// Nearest-neighbour resampling for label maps.
pub fn resample_labels(labels: &LabelMap, target: [usize; 3]) -> Result<LabelMap> {
    let dims = labels.dims();
    if dims == target {
        return Ok(labels.clone());
    }
    let spacing = target_geometry(dims, labels.spacing(), target)?;
    let axes: [Vec<usize>; 3] = [0, 1, 2].map(|a| {
        (0..target[a])
            .map(|j| {
                let p = source_coord(j, dims[a], target[a]);
                ((p + 0.5).floor() as usize).min(dims[a] - 1)
            })
            .collect()
    });
    LabelMap::from_fn(target, spacing, |x, y, z| {
        labels.get(axes[0][x], axes[1][y], axes[2][z])
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn same_dims_is_identity() {
        let v = Volume::from_fn([5, 4, 3], [0.7, 0.8, 2.5], |x, y, z| (x * y + z) as f32).unwrap();
        assert_eq!(resample(&v, [5, 4, 3]).unwrap(), v);
        let l = v.map(|f| (f as u8) % 5).unwrap();
        assert_eq!(resample_labels(&l, [5, 4, 3]).unwrap(), l);
    }

    #[test]
    fn constant_stays_constant() {
        let v = Volume::filled([7, 5, 3], [1.0; 3], 42.5).unwrap();
        for t in [[1, 1, 1], [3, 9, 2], [14, 10, 6]] {
            let r = resample(&v, t).unwrap();
            assert!(r.data().iter().all(|&x| x == 42.5));
            assert_eq!(r.dims(), t);
        }
    }

    #[test]
    fn halving_a_ramp() {
        // value = x; target voxel j sits at source coordinate 2j + 0.5
        let v = Volume::from_fn([8, 2, 2], [1.0; 3], |x, _, _| x as f32).unwrap();
        let r = resample(&v, [4, 1, 1]).unwrap();
        assert_eq!(r.data(), &[0.5, 2.5, 4.5, 6.5]);
        assert_eq!(r.spacing(), [2.0, 2.0, 2.0]);
        let l = LabelMap::from_fn([8, 1, 1], [1.0; 3], |x, _, _| x as u8).unwrap();
        assert_eq!(resample_labels(&l, [4, 1, 1]).unwrap().data(), &[1, 3, 5, 7]);
    }

    #[test]
    fn spacing_tracks_extent() {
        let v = Volume::filled([10, 20, 30], [0.5, 1.0, 2.0], 0.0).unwrap();
        let r = resample(&v, [5, 40, 60]).unwrap();
        assert_eq!(r.extent_mm(), v.extent_mm());
    }

    proptest! {
        #[test]
        fn bracket_preserved(seed in 0u64..500, tx in 1usize..12, ty in 1usize..12, tz in 1usize..12) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let v = Volume::from_fn([6, 5, 4], [1.0; 3], |_, _, _| rng.random_range(-100.0f32..100.0)).unwrap();
            let lo = v.data().iter().cloned().fold(f32::INFINITY, f32::min);
            let hi = v.data().iter().cloned().fold(f32::NEG_INFINITY, f32::max);
            let r = resample(&v, [tx, ty, tz]).unwrap();
            prop_assert!(r.data().iter().all(|&x| x >= lo && x <= hi));
        }
    }
}
