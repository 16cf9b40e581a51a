use serde::{Deserialize, Serialize};

use super::Volume;
use crate::error::{Error, Result};

/// Symmetric intensity window `[-half_width, +half_width]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct WindowSpec {
    half_width: f64,
}

impl WindowSpec {
    pub fn new(half_width: f64) -> Result<Self> {
        if !(half_width.is_finite() && half_width > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "window half-width must be positive, got {half_width}"
            )));
        }
        Ok(Self { half_width })
    }

    pub fn half_width(&self) -> f64 {
        self.half_width
    }

    /// Clamps `v` to the window and maps it affinely onto `[0, 1]`.
    #[inline]
    pub fn apply(&self, v: f64) -> f64 {
        let w = self.half_width;
        (v.clamp(-w, w) + w) / (2.0 * w)
    }
}

/// Windowed normalization of every voxel onto `[0, 1]`.
pub fn window_normalize(vol: &Volume, window: WindowSpec) -> Result<Volume> {
    let mut out = Vec::with_capacity(vol.len());
    for (i, &v) in vol.data().iter().enumerate() {
        if !v.is_finite() {
            let [x, y, z] = vol.coords(i);
            return Err(Error::NonFinite { index: i, x, y, z });
        }
        out.push(window.apply(f64::from(v)) as f32);
    }
    vol.with_data(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn w100() -> WindowSpec {
        WindowSpec::new(100.0).unwrap()
    }

    #[test]
    fn clamps_and_maps() {
        let v = Volume::new([3, 1, 1], [1.0; 3], vec![1500.0, -1000.0, 0.0]).unwrap();
        let n = window_normalize(&v, w100()).unwrap();
        assert_eq!(n.data(), &[1.0, 0.0, 0.5]);
        assert_eq!(n.dims(), v.dims());
        assert_eq!(n.spacing(), v.spacing());
    }

    #[test]
    fn rejects_degenerate_window() {
        assert!(WindowSpec::new(0.0).is_err());
        assert!(WindowSpec::new(-5.0).is_err());
        assert!(WindowSpec::new(f64::NAN).is_err());
    }

    proptest! {
        #[test]
        fn bounded_and_monotone(a in -5000.0f64..5000.0, b in -5000.0f64..5000.0, w in 1.0f64..500.0) {
            let win = WindowSpec::new(w).unwrap();
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            let (fl, fh) = (win.apply(lo), win.apply(hi));
            prop_assert!((0.0..=1.0).contains(&fl) && (0.0..=1.0).contains(&fh));
            prop_assert!(fl <= fh);
            if hi >= w { prop_assert_eq!(fh, 1.0); }
            if lo <= -w { prop_assert_eq!(fl, 0.0); }
        }
    }
}
