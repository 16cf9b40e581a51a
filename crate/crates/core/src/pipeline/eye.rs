use super::classes::ClassMap;
use super::infer::{segment, Thresholds};
use crate::error::{Error, Result};
use crate::nn::Network;
use crate::volume::{center_of_mass, crop, mm_box_around, CropBox, LabelMap, Volume, WindowSpec, AIR};

/// Physical size of the region cut around a located eye.
pub const EYE_BOX_MM: [f64; 3] = [75.0, 75.0, 160.0];

/// Segments `vol` with a coarse network, takes the centre of mass of the
/// predicted `eye_organ` and crops a fixed-size box around it.
pub fn locate_and_crop_eye(
    vol: &Volume,
    net: &Network,
    classes: &ClassMap,
    eye_organ: u8,
    window: WindowSpec,
    t: &Thresholds,
) -> Result<(Volume, CropBox)> {
    crop_around_organ(vol, &segment(vol, net, classes, window, t)?, eye_organ)
}

/// Crops the fixed-size eye box around the centre of mass of `organ` in
/// `labels`, which must share the grid of `vol`.
pub fn crop_around_organ(vol: &Volume, labels: &LabelMap, organ: u8) -> Result<(Volume, CropBox)> {
    vol.same_grid(labels)?;
    let center = match center_of_mass(labels, organ) {
        Err(Error::EmptyClass(_)) => {
            return Err(Error::EmptyPrediction { organ })
        }
        other => other?,
    };
    let bx = mm_box_around(center, EYE_BOX_MM, vol.spacing(), vol.dims())?;
    Ok((crop(vol, &bx, AIR)?, bx))
}
