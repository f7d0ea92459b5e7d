use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tooth identifier in FDI two-digit notation: quadrant digit 1..=4,
/// position digit 1..=8. Ordering is by numeric code, which fixes the
/// stacked row order of every per-tooth matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "u32", into = "u32")]
pub struct ToothLabel(u8);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Jaw {
    Upper,
    Lower,
}

impl ToothLabel {
    pub fn new(code: u32) -> Result<Self> {
        let quadrant = code / 10;
        let position = code % 10;
        if (1..=4).contains(&quadrant) && (1..=8).contains(&position) {
            Ok(ToothLabel(code as u8))
        } else {
            Err(Error::InvalidLabel(code))
        }
    }

    pub fn from_parts(quadrant: u32, position: u32) -> Result<Self> {
        Self::new(quadrant * 10 + position)
    }

    pub fn code(self) -> u32 {
        self.0 as u32
    }

    pub fn quadrant(self) -> u32 {
        self.code() / 10
    }

    pub fn position(self) -> u32 {
        self.code() % 10
    }

    pub fn is_upper(self) -> bool {
        self.quadrant() <= 2
    }

    pub fn jaw(self) -> Jaw {
        if self.is_upper() {
            Jaw::Upper
        } else {
            Jaw::Lower
        }
    }

    /// Patient-right quadrants (1 and 4).
    pub fn is_right(self) -> bool {
        matches!(self.quadrant(), 1 | 4)
    }

    /// Position along the arch from one end to the other: the right-side
    /// quadrant runs 8..1, the left-side quadrant continues 1..8.
    pub fn arch_order_key(self) -> i32 {
        let p = self.position() as i32;
        if self.is_right() {
            -p
        } else {
            p
        }
    }
}

impl TryFrom<u32> for ToothLabel {
    type Error = Error;
    fn try_from(code: u32) -> Result<Self> {
        ToothLabel::new(code)
    }
}

impl From<ToothLabel> for u32 {
    fn from(l: ToothLabel) -> u32 {
        l.code()
    }
}

impl fmt::Display for ToothLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl fmt::Display for Jaw {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Jaw::Upper => f.write_str("upper"),
            Jaw::Lower => f.write_str("lower"),
        }
    }
}
