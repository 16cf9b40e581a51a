use crate::error::{Error, Result};

/// Channel-major feature map: channel `c` occupies
/// `data[c * voxels .. (c + 1) * voxels]`, each channel x-fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor4 {
    channels: usize,
    dims: [usize; 3],
    data: Vec<f64>,
}

/// Channel count and spatial dims of a tensor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct Shape {
    pub channels: usize,
    pub dims: [usize; 3],
}

impl Shape {
    pub fn voxels(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn len(&self) -> usize {
        self.channels * self.voxels()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl Tensor4 {
    pub fn new(channels: usize, dims: [usize; 3], data: Vec<f64>) -> Result<Self> {
        let len = channels * dims.iter().product::<usize>();
        if data.len() != len {
            return Err(Error::InvalidParameter(format!(
                "tensor data length {} does not match {channels} x {dims:?}",
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("tensor holds non-finite values".into()));
        }
        Ok(Self {
            channels,
            dims,
            data,
        })
    }

    pub fn zeros(channels: usize, dims: [usize; 3]) -> Self {
        Self {
            channels,
            dims,
            data: vec![0.0; channels * dims.iter().product::<usize>()],
        }
    }

    /// Single-channel tensor from a volume.
    pub fn from_volume(vol: &crate::volume::Volume) -> Self {
        Self {
            channels: 1,
            dims: vol.dims(),
            data: vol.data().iter().map(|&v| f64::from(v)).collect(),
        }
    }

    pub(crate) fn from_raw(channels: usize, dims: [usize; 3], data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), channels * dims.iter().product::<usize>());
        Self {
            channels,
            dims,
            data,
        }
    }

    pub fn shape(&self) -> Shape {
        Shape {
            channels: self.channels,
            dims: self.dims,
        }
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn voxels(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        let n = self.voxels();
        &self.data[c * n..(c + 1) * n]
    }

    pub fn channel_mut(&mut self, c: usize) -> &mut [f64] {
        let n = self.voxels();
        &mut self.data[c * n..(c + 1) * n]
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}
