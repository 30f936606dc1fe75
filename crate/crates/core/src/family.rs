use std::fmt;
use std::str::FromStr;

use crate::error::Error;

/// The four synthetic PDE families.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Family {
    Hyperbolic,
    Elliptic,
    Parabolic,
    Coupled,
}

impl Family {
    pub const ALL: [Family; 4] = [
        Family::Hyperbolic,
        Family::Elliptic,
        Family::Parabolic,
        Family::Coupled,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Family::Hyperbolic => "hyperbolic",
            Family::Elliptic => "elliptic",
            Family::Parabolic => "parabolic",
            Family::Coupled => "coupled",
        }
    }

    /// Wire code used by the dataset file.
    pub fn code(self) -> u8 {
        match self {
            Family::Hyperbolic => 0,
            Family::Elliptic => 1,
            Family::Parabolic => 2,
            Family::Coupled => 3,
        }
    }

    pub fn from_code(code: u8) -> Option<Family> {
        Family::ALL.into_iter().find(|f| f.code() == code)
    }

    /// Image channels: `(u, v)` for the coupled system, one otherwise.
    pub fn channels(self) -> usize {
        match self {
            Family::Coupled => 2,
            _ => 1,
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "hyperbolic" | "hyp" => Ok(Family::Hyperbolic),
            "elliptic" | "elp" => Ok(Family::Elliptic),
            "parabolic" | "par" => Ok(Family::Parabolic),
            "coupled" => Ok(Family::Coupled),
            other => Err(Error::Config(format!("unknown family `{other}`"))),
        }
    }
}
