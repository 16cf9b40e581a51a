use serde::{Deserialize, Serialize};

/// One row of the organ registry.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OrganEntry {
    pub index: u8,
    pub name: String,
}

/// Organ indices 1..=20 of the head-and-neck label set; 0 is background.
pub const ORGANS: [&str; 20] = [
    "Brain stem",
    "Left eye",
    "Right eye",
    "Left lens of the eye",
    "Right lens of the eye",
    "Left optic nerve",
    "Right optic nerve",
    "Optic chiasma",
    "Left temporal lobes",
    "Right temporal lobes",
    "Pituitary gland",
    "Left parotid gland",
    "Right parotid gland",
    "Left inner ear",
    "Right inner ear",
    "Left mid ear",
    "Right mid ear",
    "Left temporomandibular joint",
    "Right temporomandibular joint",
    "Spinal cord",
];

pub const LEFT_EYE: u8 = 2;
pub const RIGHT_EYE: u8 = 3;
pub const LEFT_LENS: u8 = 4;
pub const RIGHT_LENS: u8 = 5;

pub fn organ_name(index: u8) -> &'static str {
    match index {
        0 => "Background",
        1..=20 => ORGANS[index as usize - 1],
        _ => "Unknown",
    }
}

pub fn default_registry() -> Vec<OrganEntry> {
    ORGANS
        .iter()
        .enumerate()
        .map(|(i, n)| OrganEntry {
            index: i as u8 + 1,
            name: (*n).to_string(),
        })
        .collect()
}
