//! Decision labels shared by tasks, agents, records and analysis.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// Which lottery was picked in a single binary decision.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Pick {
    A,
    B,
    C,
    #[serde(rename = "safe")]
    Safe,
    #[serde(rename = "risky")]
    Risky,
}

impl Pick {
    pub fn as_str(self) -> &'static str {
        match self {
            Pick::A => "A",
            Pick::B => "B",
            Pick::C => "C",
            Pick::Safe => "safe",
            Pick::Risky => "risky",
        }
    }
}

impl fmt::Display for Pick {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown label `{0}`")]
pub struct UnknownLabel(pub String);

impl FromStr for Pick {
    type Err = UnknownLabel;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "A" => Ok(Pick::A),
            "B" => Ok(Pick::B),
            "C" => Ok(Pick::C),
            "safe" => Ok(Pick::Safe),
            "risky" => Ok(Pick::Risky),
            other => Err(UnknownLabel(other.to_string())),
        }
    }
}

/// The two decisions on a spread screen: base vs. the rank-2 spread (`AB`)
/// and base vs. the rank-3 spread (`AC`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum PairTag {
    AB,
    AC,
}

impl PairTag {
    pub const BOTH: [PairTag; 2] = [PairTag::AB, PairTag::AC];

    pub fn as_str(self) -> &'static str {
        match self {
            PairTag::AB => "AB",
            PairTag::AC => "AC",
        }
    }

    /// The alternative lottery offered against the base.
    pub fn alternative(self) -> Pick {
        match self {
            PairTag::AB => Pick::B,
            PairTag::AC => Pick::C,
        }
    }

    /// Interior prize rank whose mass the alternative spreads.
    pub fn spread_rank(self) -> usize {
        match self {
            PairTag::AB => 2,
            PairTag::AC => 3,
        }
    }

    pub fn allows(self, pick: Pick) -> bool {
        pick == Pick::A || pick == self.alternative()
    }
}

impl fmt::Display for PairTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PairTag {
    type Err = UnknownLabel;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "AB" => Ok(PairTag::AB),
            "AC" => Ok(PairTag::AC),
            other => Err(UnknownLabel(other.to_string())),
        }
    }
}

/// Outcome of one spread screen: the pick in (A|B) and the pick in (A|C).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ChoicePattern {
    #[serde(rename = "(A,A)")]
    AA,
    #[serde(rename = "(B,A)")]
    BA,
    #[serde(rename = "(A,C)")]
    AC,
    #[serde(rename = "(B,C)")]
    BC,
}

impl ChoicePattern {
    /// Reporting order used throughout: (A,A), (B,A), (A,C), (B,C).
    pub const ALL: [ChoicePattern; 4] = [
        ChoicePattern::AA,
        ChoicePattern::BA,
        ChoicePattern::AC,
        ChoicePattern::BC,
    ];

    pub fn from_picks(ab: Pick, ac: Pick) -> Option<Self> {
        match (ab, ac) {
            (Pick::A, Pick::A) => Some(ChoicePattern::AA),
            (Pick::B, Pick::A) => Some(ChoicePattern::BA),
            (Pick::A, Pick::C) => Some(ChoicePattern::AC),
            (Pick::B, Pick::C) => Some(ChoicePattern::BC),
            _ => None,
        }
    }

    pub fn picks(self) -> (Pick, Pick) {
        match self {
            ChoicePattern::AA => (Pick::A, Pick::A),
            ChoicePattern::BA => (Pick::B, Pick::A),
            ChoicePattern::AC => (Pick::A, Pick::C),
            ChoicePattern::BC => (Pick::B, Pick::C),
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn label(self) -> &'static str {
        match self {
            ChoicePattern::AA => "(A,A)",
            ChoicePattern::BA => "(B,A)",
            ChoicePattern::AC => "(A,C)",
            ChoicePattern::BC => "(B,C)",
        }
    }
}

impl fmt::Display for ChoicePattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pattern_from_picks() {
        for p in ChoicePattern::ALL {
            let (ab, ac) = p.picks();
            assert_eq!(ChoicePattern::from_picks(ab, ac), Some(p));
        }
        assert_eq!(ChoicePattern::from_picks(Pick::C, Pick::A), None);
    }

    #[test]
    fn labels_round_trip() {
        for p in [Pick::A, Pick::B, Pick::C, Pick::Safe, Pick::Risky] {
            assert_eq!(p.as_str().parse::<Pick>().unwrap(), p);
            assert_eq!(serde_json::to_string(&p).unwrap(), format!("\"{p}\""));
        }
        assert!("D".parse::<Pick>().is_err());
        assert_eq!(serde_json::to_string(&ChoicePattern::BA).unwrap(), "\"(B,A)\"");
        assert!(PairTag::AC.allows(Pick::C) && !PairTag::AC.allows(Pick::B));
    }
}
