use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Image source of a record or gallery entry.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum View {
    Drone,
    Satellite,
    Ground,
    Other,
}

impl View {
    pub fn as_str(self) -> &'static str {
        match self {
            View::Drone => "drone",
            View::Satellite => "satellite",
            View::Ground => "ground",
            View::Other => "other",
        }
    }

    /// Maps a dataset directory name to a view; unknown names become `Other`.
    pub fn from_dir_name(name: &str) -> View {
        match name {
            "drone" => View::Drone,
            "satellite" => View::Satellite,
            "street" | "ground" => View::Ground,
            _ => View::Other,
        }
    }
}

impl fmt::Display for View {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for View {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "drone" => Ok(View::Drone),
            "satellite" => Ok(View::Satellite),
            "ground" => Ok(View::Ground),
            "other" => Ok(View::Other),
            other => Err(Error::InvalidConfig(format!("unknown view {other:?}"))),
        }
    }
}
