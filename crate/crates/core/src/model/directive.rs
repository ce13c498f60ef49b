//! ULSAM position grammar: `"L"` replaces layer L, `"L:1"` inserts after it.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum PlacementMode {
    /// Place a ULSAM block directly after the layer's final activation.
    InsertAfter,
    /// Remove the layer and put a ULSAM block in its place.
    Substitute,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct PositionDirective {
    pub layer: usize,
    pub mode: PlacementMode,
}

impl PositionDirective {
    pub fn insert_after(layer: usize) -> Self {
        PositionDirective {
            layer,
            mode: PlacementMode::InsertAfter,
        }
    }

    pub fn substitute(layer: usize) -> Self {
        PositionDirective {
            layer,
            mode: PlacementMode::Substitute,
        }
    }

    /// Node label of the ULSAM block this directive creates.
    pub fn label(&self) -> String {
        self.to_string()
    }
}

impl fmt::Display for PositionDirective {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.mode {
            PlacementMode::InsertAfter => write!(f, "{}:1", self.layer),
            PlacementMode::Substitute => write!(f, "{}", self.layer),
        }
    }
}

fn parse_layer(text: &str, whole: &str) -> Result<usize> {
    if text.is_empty() || !text.bytes().all(|b| b.is_ascii_digit()) {
        return Err(Error::directive(whole, "layer index must be a positive integer"));
    }
    match text.parse::<usize>() {
        Ok(0) | Err(_) => Err(Error::directive(whole, "layer index must be a positive integer")),
        Ok(n) => Ok(n),
    }
}

impl FromStr for PositionDirective {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let t = s.trim();
        match t.split_once(':') {
            None => Ok(PositionDirective::substitute(parse_layer(t, s)?)),
            Some((layer, "1")) => Ok(PositionDirective::insert_after(parse_layer(layer, s)?)),
            Some(_) => Err(Error::directive(s, "expected `L` or `L:1`")),
        }
    }
}

impl Serialize for PositionDirective {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for PositionDirective {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Parse a comma-separated list such as `"8:1, 9:1, 11"`.
pub fn parse_positions(csv: &str) -> Result<Vec<PositionDirective>> {
    if csv.trim().is_empty() {
        return Ok(Vec::new());
    }
    csv.split(',').map(str::parse).collect()
}

/// Canonical position string: sorted by layer, inserts before substitutions
/// of the same layer, joined with `", "`.
pub fn format_positions(directives: &[PositionDirective]) -> String {
    let mut sorted = directives.to_vec();
    sorted.sort();
    sorted.iter().map(|d| d.to_string()).collect::<Vec<_>>().join(", ")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grammar() {
        assert_eq!("11".parse::<PositionDirective>().unwrap(), PositionDirective::substitute(11));
        assert_eq!(" 8:1".parse::<PositionDirective>().unwrap(), PositionDirective::insert_after(8));
        for bad in ["9:2", "0", "", "a", "8:", ":1", "-3", "8:1:1", "1.5"] {
            assert!(
                matches!(bad.parse::<PositionDirective>(), Err(Error::Directive { .. })),
                "{bad:?}"
            );
        }
    }

    #[test]
    fn csv_round_trip() {
        let d = parse_positions("11,8:1 , 9:1").unwrap();
        assert_eq!(format_positions(&d), "8:1, 9:1, 11");
        assert!(parse_positions("").unwrap().is_empty());
        assert!(parse_positions("8:1,,9").is_err());
    }

    #[test]
    fn serde_uses_the_grammar() {
        let d: Vec<PositionDirective> = serde_json::from_str(r#"["8:1","11"]"#).unwrap();
        assert_eq!(serde_json::to_string(&d).unwrap(), r#"["8:1","11"]"#);
        assert!(serde_json::from_str::<Vec<PositionDirective>>(r#"["9:2"]"#).is_err());
    }
}
