use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::Error;

/// Feature channel of an utterance.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Modality {
    #[serde(rename = "a")]
    Audio,
    #[serde(rename = "v")]
    Visual,
    #[serde(rename = "l")]
    Text,
}

impl Modality {
    /// Canonical (a, v, l) order.
    pub const ALL: [Modality; 3] = [Modality::Audio, Modality::Visual, Modality::Text];

    pub fn tag(self) -> char {
        match self {
            Modality::Audio => 'a',
            Modality::Visual => 'v',
            Modality::Text => 'l',
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Modality::Audio => "audio",
            Modality::Visual => "visual",
            Modality::Text => "text",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.tag())
    }
}

impl FromStr for Modality {
    type Err = Error;

    /// Accepts `a`/`v`/`l`, `t` for text, or the full names.
    fn from_str(s: &str) -> Result<Self, Error> {
        match s {
            "a" | "audio" => Ok(Modality::Audio),
            "v" | "visual" => Ok(Modality::Visual),
            "l" | "t" | "text" => Ok(Modality::Text),
            _ => Err(Error::invalid(format!("unknown modality `{s}`"))),
        }
    }
}

/// Parses a compact modality set such as `avt`, `al` or `a,v,l`, returned
/// in canonical order without duplicates.
pub fn parse_modalities(s: &str) -> Result<Vec<Modality>, Error> {
    let mut out = Vec::new();
    for c in s.chars().filter(|c| !matches!(c, ',' | ' ' | '+')) {
        let m: Modality = c.to_string().parse()?;
        if !out.contains(&m) {
            out.push(m);
        }
    }
    if out.is_empty() {
        return Err(Error::invalid("empty modality set"));
    }
    out.sort();
    Ok(out)
}
