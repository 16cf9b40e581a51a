//! Hausdorff distance between voxel sets, in millimetres.
//!
//! Points are voxel centres scaled by the grid spacing. For every point of
//! the source set the nearest target point is found by a scan that stops as
//! soon as it drops below the running maximum, since such a point can no
//! longer raise the result. Source points that are themselves in the target
//! contribute zero and are skipped.

use crate::error::{Error, Result};
use crate::par;
use crate::volume::BinaryMask;

fn physical(mask: &BinaryMask) -> Vec<[f64; 3]> {
    let s = mask.spacing();
    mask.points()
        .into_iter()
        .map(|p| [0, 1, 2].map(|a| p[a] as f64 * s[a]))
        .collect()
}

#[inline]
fn dist2(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    dx * dx + dy * dy + dz * dz
}

/// Squared directed distance; points of `a` that lie in `b` are skipped.
fn directed2(a: &BinaryMask, b: &BinaryMask) -> f64 {
    let src: Vec<[f64; 3]> = {
        let s = a.spacing();
        a.data()
            .iter()
            .zip(b.data())
            .enumerate()
            .filter(|(_, (&x, &y))| x && !y)
            .map(|(i, _)| {
                let p = a.coords(i);
                [0, 1, 2].map(|k| p[k] as f64 * s[k])
            })
            .collect()
    };
    if src.is_empty() {
        return 0.0;
    }
    let dst = physical(b);
    // Chunks scan independently; each keeps its own running maximum and
    // the chunk maxima are combined afterwards, which is order independent.
    const CHUNK: usize = 256;
    let chunks = src.len().div_ceil(CHUNK);
    let maxima = par::map_range(chunks, |c| {
        let mut worst = 0.0f64;
        for p in &src[c * CHUNK..((c + 1) * CHUNK).min(src.len())] {
            let mut best = f64::INFINITY;
            for q in &dst {
                let d = dist2(p, q);
                if d < best {
                    best = d;
                    if best <= worst {
                        break;
                    }
                }
            }
            worst = worst.max(best);
        }
        worst
    });
    maxima.into_iter().fold(0.0, f64::max)
}

fn check(a: &BinaryMask, b: &BinaryMask) -> Result<()> {
    a.same_grid(b)?;
    if a.spacing() != b.spacing() {
        return Err(Error::InvalidParameter(format!(
            "spacing mismatch {:?} vs {:?}",
            a.spacing(),
            b.spacing()
        )));
    }
    if a.count() == 0 || b.count() == 0 {
        return Err(Error::EmptyMask("the Hausdorff distance"));
    }
    Ok(())
}

/// `h(A, B) = max_{a in A} min_{b in B} |a - b|` in mm.
pub fn directed_hausdorff(a: &BinaryMask, b: &BinaryMask) -> Result<f64> {
    check(a, b)?;
    Ok(directed2(a, b).sqrt())
}

/// `max(h(A, B), h(B, A))` in mm.
pub fn hausdorff(a: &BinaryMask, b: &BinaryMask) -> Result<f64> {
    check(a, b)?;
    Ok(directed2(a, b).max(directed2(b, a)).sqrt())
}
