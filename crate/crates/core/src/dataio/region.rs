use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// Number of graph nodes.
pub const NUM_REGIONS: usize = 10;

/// One of the ten aggregated world regions. The declaration order is the node
/// index order used everywhere (`Region::index`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Region {
    NorthAmerica,
    SouthAmerica,
    Oceania,
    Africa,
    MiddleEast,
    EasternEurope,
    WesternEurope,
    CentralAsia,
    SouthAsia,
    SoutheastAsia,
}

/// The fixed, ordered region set. `REGIONS[i].index() == i`.
pub const REGIONS: [Region; NUM_REGIONS] = [
    Region::NorthAmerica,
    Region::SouthAmerica,
    Region::Oceania,
    Region::Africa,
    Region::MiddleEast,
    Region::EasternEurope,
    Region::WesternEurope,
    Region::CentralAsia,
    Region::SouthAsia,
    Region::SoutheastAsia,
];

impl Region {
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Region> {
        REGIONS.get(i).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            Region::NorthAmerica => "NorthAmerica",
            Region::SouthAmerica => "SouthAmerica",
            Region::Oceania => "Oceania",
            Region::Africa => "Africa",
            Region::MiddleEast => "MiddleEast",
            Region::EasternEurope => "EasternEurope",
            Region::WesternEurope => "WesternEurope",
            Region::CentralAsia => "CentralAsia",
            Region::SouthAsia => "SouthAsia",
            Region::SoutheastAsia => "SoutheastAsia",
        }
    }

    /// Short code accepted on the command line (`WE`, `NA`, ...).
    pub fn code(self) -> &'static str {
        match self {
            Region::NorthAmerica => "NA",
            Region::SouthAmerica => "SA",
            Region::Oceania => "OC",
            Region::Africa => "AF",
            Region::MiddleEast => "ME",
            Region::EasternEurope => "EE",
            Region::WesternEurope => "WE",
            Region::CentralAsia => "CA",
            Region::SouthAsia => "SAS",
            Region::SoutheastAsia => "SEA",
        }
    }
}

impl fmt::Display for Region {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown region `{0}`")]
pub struct UnknownRegion(pub String);

impl FromStr for Region {
    type Err = UnknownRegion;

    /// Accepts the canonical name or the short code, case-insensitively.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let t = s.trim();
        REGIONS
            .iter()
            .copied()
            .find(|r| r.name().eq_ignore_ascii_case(t) || r.code().eq_ignore_ascii_case(t))
            .ok_or_else(|| UnknownRegion(t.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn order_is_stable() {
        for (i, r) in REGIONS.iter().enumerate() {
            assert_eq!(r.index(), i);
            assert_eq!(Region::from_index(i), Some(*r));
        }
    }

    #[test]
    fn parses_names_and_codes() {
        assert_eq!("WE".parse::<Region>().unwrap(), Region::WesternEurope);
        assert_eq!("westerneurope".parse::<Region>().unwrap(), Region::WesternEurope);
        assert_eq!("SAS".parse::<Region>().unwrap(), Region::SouthAsia);
        assert!("Atlantis".parse::<Region>().is_err());
    }

    #[test]
    fn codes_are_unique() {
        let mut codes: Vec<_> = REGIONS.iter().map(|r| r.code()).collect();
        codes.sort();
        codes.dedup();
        assert_eq!(codes.len(), NUM_REGIONS);
    }
}
