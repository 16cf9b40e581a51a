//! Volumes, label maps and deterministic preprocessing.
//!
//! All grids share one layout: x varies fastest, so the voxel `(x, y, z)`
//! lives at `x + nx * (y + ny * z)`.

mod crop;
mod resample;
mod rotate;
mod window;

pub use crop::{center_of_mass, crop, mm_box_around, mm_extent_voxels, CropBox};
pub use resample::{resample, resample_labels};
pub use rotate::{augmentation_angles, rotate, rotate_labels, Interpolation};
pub use window::{window_normalize, WindowSpec};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest organ index in the label registry; 0 is background.
pub const MAX_LABEL: u8 = 20;

/// Air in CT-number-like units; the default out-of-field fill for intensities.
pub const AIR: f32 = -1000.0;

/// Element types that may live in a [`Grid`].
pub trait Voxel: Copy + Send + Sync + PartialEq + std::fmt::Debug + 'static {
    /// Whether a single value satisfies the grid invariant.
    fn is_valid(&self) -> bool;
}

impl Voxel for f32 {
    fn is_valid(&self) -> bool {
        self.is_finite()
    }
}

impl Voxel for u8 {
    fn is_valid(&self) -> bool {
        *self <= MAX_LABEL
    }
}

impl Voxel for bool {
    fn is_valid(&self) -> bool {
        true
    }
}

/// A dense 3-D grid with physical voxel spacing in millimetres.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid<T> {
    dims: [usize; 3],
    spacing: [f64; 3],
    data: Vec<T>,
}

/// CT intensities, dose grids and probability maps.
pub type Volume = Grid<f32>;
/// Per-voxel organ index (0 = background, 1..=20 per the organ registry).
pub type LabelMap = Grid<u8>;
/// One organ (or any boolean region) on a grid.
pub type BinaryMask = Grid<bool>;

fn check_geometry(dims: [usize; 3], spacing: [f64; 3]) -> Result<()> {
    if dims.contains(&0) {
        return Err(Error::InvalidGrid(format!("dims {dims:?} must all be >= 1")));
    }
    if spacing.iter().any(|&s| !(s.is_finite() && s > 0.0)) {
        return Err(Error::InvalidGrid(format!(
            "spacing {spacing:?} must be finite and positive"
        )));
    }
    Ok(())
}

impl<T: Voxel> Grid<T> {
    pub fn new(dims: [usize; 3], spacing: [f64; 3], data: Vec<T>) -> Result<Self> {
        check_geometry(dims, spacing)?;
        let len = dims[0] * dims[1] * dims[2];
        if data.len() != len {
            return Err(Error::InvalidGrid(format!(
                "data length {} does not match dims {dims:?} ({len})",
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_valid()) {
            return Err(Error::InvalidGrid(format!(
                "voxel {i} holds invalid value {:?}",
                data[i]
            )));
        }
        Ok(Self { dims, spacing, data })
    }

    /// A grid filled with `value`.
    pub fn filled(dims: [usize; 3], spacing: [f64; 3], value: T) -> Result<Self> {
        check_geometry(dims, spacing)?;
        if !value.is_valid() {
            return Err(Error::InvalidGrid(format!("invalid fill value {value:?}")));
        }
        Ok(Self {
            dims,
            spacing,
            data: vec![value; dims[0] * dims[1] * dims[2]],
        })
    }

    /// Builds a grid by evaluating `f(x, y, z)` at every voxel.
    pub fn from_fn(
        dims: [usize; 3],
        spacing: [f64; 3],
        mut f: impl FnMut(usize, usize, usize) -> T,
    ) -> Result<Self> {
        check_geometry(dims, spacing)?;
        let mut data = Vec::with_capacity(dims[0] * dims[1] * dims[2]);
        for z in 0..dims[2] {
            for y in 0..dims[1] {
                for x in 0..dims[0] {
                    data.push(f(x, y, z));
                }
            }
        }
        Self::new(dims, spacing, data)
    }

    /// Same geometry, new contents.
    pub fn with_data<U: Voxel>(&self, data: Vec<U>) -> Result<Grid<U>> {
        Grid::new(self.dims, self.spacing, data)
    }

    pub fn map<U: Voxel>(&self, f: impl Fn(T) -> U) -> Result<Grid<U>> {
        self.with_data(self.data.iter().map(|&v| f(v)).collect())
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn spacing(&self) -> [f64; 3] {
        self.spacing
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        x + self.dims[0] * (y + self.dims[1] * z)
    }

    /// Inverse of [`Grid::index`].
    #[inline]
    pub fn coords(&self, index: usize) -> [usize; 3] {
        let x = index % self.dims[0];
        let r = index / self.dims[0];
        [x, r % self.dims[1], r / self.dims[1]]
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, z: usize) -> T {
        self.data[self.index(x, y, z)]
    }

    /// Sets one voxel, rejecting values that break the grid invariant.
    pub fn set(&mut self, x: usize, y: usize, z: usize, value: T) -> Result<()> {
        if !value.is_valid() {
            return Err(Error::InvalidGrid(format!("invalid value {value:?}")));
        }
        let i = self.index(x, y, z);
        self.data[i] = value;
        Ok(())
    }

    pub fn same_grid<U>(&self, other: &Grid<U>) -> Result<()> {
        if self.dims != other.dims {
            return Err(Error::GridMismatch {
                left: self.dims,
                right: other.dims,
            });
        }
        Ok(())
    }

    /// Physical extent `dims * spacing` along each axis in mm.
    pub fn extent_mm(&self) -> [f64; 3] {
        [0, 1, 2].map(|a| self.dims[a] as f64 * self.spacing[a])
    }
}

impl LabelMap {
    /// Boolean mask of one organ index.
    pub fn mask_of(&self, label: u8) -> BinaryMask {
        Grid {
            dims: self.dims,
            spacing: self.spacing,
            data: self.data.iter().map(|&v| v == label).collect(),
        }
    }

    /// Number of voxels carrying `label`.
    pub fn count(&self, label: u8) -> usize {
        self.data.iter().filter(|&&v| v == label).count()
    }
}

impl BinaryMask {
    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&v| v).count()
    }

    /// Voxel coordinates of the set voxels, in index order.
    pub fn points(&self) -> Vec<[usize; 3]> {
        self.data
            .iter()
            .enumerate()
            .filter(|(_, &v)| v)
            .map(|(i, _)| self.coords(i))
            .collect()
    }
}

/// Rotation / selection axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    X,
    Y,
    Z,
}

impl Axis {
    pub const ALL: [Axis; 3] = [Axis::X, Axis::Y, Axis::Z];

    pub fn index(self) -> usize {
        match self {
            Axis::X => 0,
            Axis::Y => 1,
            Axis::Z => 2,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn index_is_x_fastest() {
        let g = Volume::from_fn([3, 4, 5], [1.0; 3], |x, y, z| (x + 10 * y + 100 * z) as f32).unwrap();
        assert_eq!(g.data()[1], 1.0);
        assert_eq!(g.data()[3], 10.0);
        assert_eq!(g.data()[12], 100.0);
        assert_eq!(g.coords(g.index(2, 3, 4)), [2, 3, 4]);
    }

    #[test]
    fn rejects_bad_grids() {
        assert!(Volume::new([0, 1, 1], [1.0; 3], vec![]).is_err());
        assert!(Volume::new([1, 1, 1], [0.0, 1.0, 1.0], vec![0.0]).is_err());
        assert!(Volume::new([2, 1, 1], [1.0; 3], vec![0.0]).is_err());
        assert!(Volume::new([1, 1, 1], [1.0; 3], vec![f32::NAN]).is_err());
        assert!(LabelMap::new([1, 1, 1], [1.0; 3], vec![21]).is_err());
        assert!(LabelMap::new([1, 1, 1], [1.0; 3], vec![20]).is_ok());
    }

    #[test]
    fn set_keeps_invariant() {
        let mut l = LabelMap::filled([2, 2, 2], [1.0; 3], 0).unwrap();
        assert!(l.set(1, 1, 1, 30).is_err());
        l.set(1, 1, 1, 4).unwrap();
        assert_eq!(l.count(4), 1);
        assert_eq!(l.mask_of(4).points(), vec![[1, 1, 1]]);
    }
}
