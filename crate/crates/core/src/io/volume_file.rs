//! The `VVOL1` format: one line of JSON header, then the raw little-endian
//! payload (`f32` intensities or `u8` labels, x-fastest).

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::write_atomic;
use crate::volume::{Grid, LabelMap, Volume};

pub const MAGIC: &str = "VVOL1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ValueKind {
    Float32,
    Uint8,
}

impl ValueKind {
    pub fn size(self) -> usize {
        match self {
            ValueKind::Float32 => 4,
            ValueKind::Uint8 => 1,
        }
    }

    fn label(self) -> &'static str {
        match self {
            ValueKind::Float32 => "float32",
            ValueKind::Uint8 => "uint8",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VolumeHeader {
    pub magic: String,
    pub dims: [usize; 3],
    pub spacing: [f64; 3],
    pub kind: ValueKind,
    pub byte_order: String,
    /// Always `"inline"`: the payload starts right after the header line.
    pub payload: String,
    pub payload_bytes: usize,
}

/// Either kind of grid, as found on disk.
#[derive(Debug, Clone, PartialEq)]
pub enum AnyGrid {
    Intensity(Volume),
    Labels(LabelMap),
}

fn encode(dims: [usize; 3], spacing: [f64; 3], kind: ValueKind, payload: Vec<u8>) -> Result<Vec<u8>> {
    let header = VolumeHeader {
        magic: MAGIC.into(),
        dims,
        spacing,
        kind,
        byte_order: "little".into(),
        payload: "inline".into(),
        payload_bytes: payload.len(),
    };
    let mut out = serde_json::to_vec(&header)?;
    out.push(b'\n');
    out.extend(payload);
    Ok(out)
}

pub fn write_volume(path: &Path, vol: &Volume) -> Result<()> {
    let payload = vol.data().iter().flat_map(|v| v.to_le_bytes()).collect();
    write_atomic(path, &encode(vol.dims(), vol.spacing(), ValueKind::Float32, payload)?)
}

pub fn write_labels(path: &Path, labels: &LabelMap) -> Result<()> {
    write_atomic(
        path,
        &encode(labels.dims(), labels.spacing(), ValueKind::Uint8, labels.data().to_vec())?,
    )
}

/// Reads either kind of grid, validating magic, byte order and payload length.
pub fn read_grid(path: &Path) -> Result<AnyGrid> {
    let bytes = std::fs::read(path)?;
    let fmt = |m: String| Error::Format {
        path: path.to_path_buf(),
        message: m,
    };
    let nl = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| fmt("missing header line".into()))?;
    let header: VolumeHeader =
        serde_json::from_slice(&bytes[..nl]).map_err(|e| fmt(format!("bad header: {e}")))?;
    if header.magic != MAGIC {
        return Err(fmt(format!("bad magic {:?}, expected {MAGIC}", header.magic)));
    }
    if header.byte_order != "little" || header.payload != "inline" {
        return Err(fmt(format!(
            "unsupported layout {} / {}",
            header.byte_order, header.payload
        )));
    }
    let voxels: usize = header.dims.iter().product();
    let expected = voxels * header.kind.size();
    let payload = &bytes[nl + 1..];
    if header.payload_bytes != expected || payload.len() != expected {
        return Err(Error::LengthMismatch {
            path: path.to_path_buf(),
            expected,
            found: payload.len(),
        });
    }
    let grid_err = |e: Error| fmt(e.to_string());
    Ok(match header.kind {
        ValueKind::Float32 => {
            let data = payload
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                .collect();
            AnyGrid::Intensity(Grid::new(header.dims, header.spacing, data).map_err(grid_err)?)
        }
        ValueKind::Uint8 => AnyGrid::Labels(
            Grid::new(header.dims, header.spacing, payload.to_vec()).map_err(grid_err)?,
        ),
    })
}

pub fn read_volume(path: &Path) -> Result<Volume> {
    match read_grid(path)? {
        AnyGrid::Intensity(v) => Ok(v),
        AnyGrid::Labels(_) => Err(Error::ValueKind {
            path: path.to_path_buf(),
            expected: ValueKind::Float32.label(),
            found: ValueKind::Uint8.label().into(),
        }),
    }
}

pub fn read_labels(path: &Path) -> Result<LabelMap> {
    match read_grid(path)? {
        AnyGrid::Labels(l) => Ok(l),
        AnyGrid::Intensity(_) => Err(Error::ValueKind {
            path: path.to_path_buf(),
            expected: ValueKind::Uint8.label(),
            found: ValueKind::Float32.label().into(),
        }),
    }
}
