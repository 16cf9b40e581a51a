use super::resample::{sample_nearest, sample_trilinear};
use super::{Axis, Grid, Volume, Voxel};
use crate::par;

/// Resampling rule for [`rotate`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Interpolation {
    Trilinear,
    Nearest,
}

/// Augmentation angles in degrees: `-25, -22, ..., 23`.
///
/// A 3° step starting at -25° never lands on +25°, so the grid stops at 23°
/// (17 angles per axis).
pub fn augmentation_angles() -> Vec<f64> {
    (0..17).map(|k| -25.0 + 3.0 * k as f64).collect()
}

/// `(cos, sin)` with exact values at multiples of 90°.
fn cos_sin(angle_deg: f64) -> (f64, f64) {
    let r = angle_deg.rem_euclid(360.0);
    match r {
        r if r == 0.0 => (1.0, 0.0),
        r if r == 90.0 => (0.0, 1.0),
        r if r == 180.0 => (-1.0, 0.0),
        r if r == 270.0 => (0.0, -1.0),
        _ => {
            let t = angle_deg.to_radians();
            (t.cos(), t.sin())
        }
    }
}

/// The two in-plane axes, ordered so that rotation by a positive angle is
/// counter-clockwise looking down the rotation axis.
fn plane(axis: Axis) -> (usize, usize) {
    match axis {
        Axis::X => (1, 2),
        Axis::Y => (2, 0),
        Axis::Z => (0, 1),
    }
}

trait Sampler<T> {
    fn sample(&self, vol: &Grid<T>, p: [f64; 3]) -> Option<T>;
}

struct Linear;
struct Nearest;

impl Sampler<f32> for Linear {
    fn sample(&self, vol: &Volume, p: [f64; 3]) -> Option<f32> {
        sample_trilinear(vol, p).map(|v| v as f32)
    }
}

impl<T: Voxel> Sampler<T> for Nearest {
    fn sample(&self, vol: &Grid<T>, p: [f64; 3]) -> Option<T> {
        sample_nearest(vol, p)
    }
}

fn rotate_with<T: Voxel, S: Sampler<T> + Sync>(
    vol: &Grid<T>,
    axis: Axis,
    angle_deg: f64,
    sampler: S,
    fill: T,
) -> Grid<T> {
    let (cos, sin) = cos_sin(angle_deg);
    if cos == 1.0 && sin == 0.0 {
        return vol.clone();
    }
    let dims = vol.dims();
    let spacing = vol.spacing();
    let center = dims.map(|d| (d as f64 - 1.0) / 2.0);
    let (u, v) = plane(axis);
    let slice = dims[0] * dims[1];
    let mut out = vec![fill; vol.len()];
    par::for_each_chunk_mut(&mut out, slice, |z, plane_out| {
        for y in 0..dims[1] {
            for x in 0..dims[0] {
                let idx = [x, y, z];
                // inverse map: rotate the output position by -angle
                let pu = (idx[u] as f64 - center[u]) * spacing[u];
                let pv = (idx[v] as f64 - center[v]) * spacing[v];
                let su = cos * pu + sin * pv;
                let sv = -sin * pu + cos * pv;
                let mut p = idx.map(|i| i as f64);
                p[u] = su / spacing[u] + center[u];
                p[v] = sv / spacing[v] + center[v];
                if let Some(s) = sampler.sample(vol, p) {
                    plane_out[x + dims[0] * y] = s;
                }
            }
        }
    });
    Grid::new(dims, spacing, out).expect("rotation preserves the grid invariant")
}

/// Rotates an intensity volume about its centre (physical coordinates),
/// filling samples that fall outside the source with `fill`.
pub fn rotate(vol: &Volume, axis: Axis, angle_deg: f64, mode: Interpolation, fill: f32) -> Volume {
    match mode {
        Interpolation::Trilinear => rotate_with(vol, axis, angle_deg, Linear, fill),
        Interpolation::Nearest => rotate_with(vol, axis, angle_deg, Nearest, fill),
    }
}

/// Nearest-neighbour rotation for label maps and masks.
pub fn rotate_labels<T: Voxel>(vol: &Grid<T>, axis: Axis, angle_deg: f64, fill: T) -> Grid<T> {
    rotate_with(vol, axis, angle_deg, Nearest, fill)
}
