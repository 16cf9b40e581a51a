use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume::{LabelMap, MAX_LABEL};

/// Correspondence between network output classes and organ indices.
///
/// Class `i` predicts organ `organs[i]`; class 0 is always background.
/// Organs that are not listed are treated as background during training.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<u8>", into = "Vec<u8>")]
pub struct ClassMap {
    organs: Vec<u8>,
}

impl ClassMap {
    pub fn new(organs: Vec<u8>) -> Result<Self> {
        if organs.len() < 2 || organs[0] != 0 {
            return Err(Error::InvalidParameter(
                "class map needs background first and at least one organ".into(),
            ));
        }
        let mut seen = [false; MAX_LABEL as usize + 1];
        for &o in &organs {
            if o > MAX_LABEL || std::mem::replace(&mut seen[o as usize], true) {
                return Err(Error::InvalidParameter(format!(
                    "organ {o} is out of range or listed twice"
                )));
            }
        }
        Ok(Self { organs })
    }

    /// Background plus all twenty organs, class index == organ index.
    pub fn all_organs() -> Self {
        Self {
            organs: (0..=MAX_LABEL).collect(),
        }
    }

    pub fn num_classes(&self) -> usize {
        self.organs.len()
    }

    pub fn organs(&self) -> &[u8] {
        &self.organs
    }

    pub fn organ_of(&self, class: usize) -> u8 {
        self.organs[class]
    }

    pub fn class_of(&self, organ: u8) -> Option<usize> {
        self.organs.iter().position(|&o| o == organ)
    }

    /// Organ labels to class indices.
    pub fn to_classes(&self, labels: &LabelMap) -> LabelMap {
        let mut lut = [0u8; MAX_LABEL as usize + 1];
        for (c, &o) in self.organs.iter().enumerate() {
            lut[o as usize] = c as u8;
        }
        labels.map(|v| lut[v as usize]).expect("class indices fit the label range")
    }

    /// Class indices back to organ labels.
    pub fn to_organs(&self, classes: &LabelMap) -> LabelMap {
        classes
            .map(|c| self.organs[c as usize])
            .expect("organ indices fit the label range")
    }
}

impl TryFrom<Vec<u8>> for ClassMap {
    type Error = Error;
    fn try_from(v: Vec<u8>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<ClassMap> for Vec<u8> {
    fn from(c: ClassMap) -> Self {
        c.organs
    }
}
