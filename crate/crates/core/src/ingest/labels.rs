//! Event-level and record-level label sets with their stable integer codes.
//!
//! Label strings are matched case-insensitively after whitespace removal;
//! `&`, `+` and the word `and` are treated as the same conjunction, so
//! `"Wheeze & Crackle"`, `"wheeze+crackle"` and `"WheezeAndCrackle"` all
//! resolve to [`EventLabel::WheezeAndCrackle`].

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum EventLabel {
    Normal,
    Rhonchi,
    Wheeze,
    Stridor,
    CoarseCrackle,
    FineCrackle,
    WheezeAndCrackle,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum RecordLabel {
    Normal,
    #[serde(rename = "CAS")]
    Cas,
    #[serde(rename = "DAS")]
    Das,
    #[serde(rename = "CASandDAS")]
    CasAndDas,
    PoorQuality,
}

/// Either label level; used where a synthetic spec or a sample may carry one or the other.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum AnyLabel {
    Event(EventLabel),
    Record(RecordLabel),
}

fn normalize(s: &str) -> String {
    let lowered: String = s
        .chars()
        .filter(|c| !c.is_whitespace() && *c != '_' && *c != '-')
        .flat_map(char::to_lowercase)
        .collect();
    lowered.replace(['&', '+'], "and")
}

impl EventLabel {
    pub const ALL: [EventLabel; 7] = [
        EventLabel::Normal,
        EventLabel::Rhonchi,
        EventLabel::Wheeze,
        EventLabel::Stridor,
        EventLabel::CoarseCrackle,
        EventLabel::FineCrackle,
        EventLabel::WheezeAndCrackle,
    ];

    pub fn code(self) -> usize {
        self as usize
    }

    pub fn from_code(code: usize) -> Option<Self> {
        Self::ALL.get(code).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            EventLabel::Normal => "Normal",
            EventLabel::Rhonchi => "Rhonchi",
            EventLabel::Wheeze => "Wheeze",
            EventLabel::Stridor => "Stridor",
            EventLabel::CoarseCrackle => "Coarse Crackle",
            EventLabel::FineCrackle => "Fine Crackle",
            EventLabel::WheezeAndCrackle => "Wheeze & Crackle",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        let key = normalize(s);
        let label = match key.as_str() {
            "normal" | "n" => EventLabel::Normal,
            "rhonchi" | "rhonchus" | "rho" => EventLabel::Rhonchi,
            "wheeze" | "wheezes" | "w" => EventLabel::Wheeze,
            "stridor" | "str" => EventLabel::Stridor,
            "coarsecrackle" | "coarsecrackles" | "cc" => EventLabel::CoarseCrackle,
            "finecrackle" | "finecrackles" | "fc" => EventLabel::FineCrackle,
            "wheezeandcrackle" | "wheezeandcrackles" | "wheezecrackle" | "wc" => EventLabel::WheezeAndCrackle,
            _ => return Err(Error::UnknownLabelString(s.to_string())),
        };
        Ok(label)
    }

    /// Record-level family this event type belongs to.
    pub fn record_family(self) -> RecordLabel {
        match self {
            EventLabel::Normal => RecordLabel::Normal,
            EventLabel::Rhonchi | EventLabel::Wheeze | EventLabel::Stridor => RecordLabel::Cas,
            EventLabel::CoarseCrackle | EventLabel::FineCrackle => RecordLabel::Das,
            EventLabel::WheezeAndCrackle => RecordLabel::CasAndDas,
        }
    }

    /// Lowercase identifier used on the command line (`fine_crackle`, ...).
    pub fn slug(self) -> &'static str {
        match self {
            EventLabel::Normal => "normal",
            EventLabel::Rhonchi => "rhonchi",
            EventLabel::Wheeze => "wheeze",
            EventLabel::Stridor => "stridor",
            EventLabel::CoarseCrackle => "coarse_crackle",
            EventLabel::FineCrackle => "fine_crackle",
            EventLabel::WheezeAndCrackle => "wheeze_crackle",
        }
    }
}

impl RecordLabel {
    pub const ALL: [RecordLabel; 5] = [
        RecordLabel::Normal,
        RecordLabel::Cas,
        RecordLabel::Das,
        RecordLabel::CasAndDas,
        RecordLabel::PoorQuality,
    ];

    pub fn code(self) -> usize {
        self as usize
    }

    pub fn from_code(code: usize) -> Option<Self> {
        Self::ALL.get(code).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            RecordLabel::Normal => "Normal",
            RecordLabel::Cas => "CAS",
            RecordLabel::Das => "DAS",
            RecordLabel::CasAndDas => "CAS & DAS",
            RecordLabel::PoorQuality => "Poor Quality",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        let key = normalize(s);
        let label = match key.as_str() {
            "normal" | "n" => RecordLabel::Normal,
            "cas" | "continuousadventitioussounds" => RecordLabel::Cas,
            "das" | "discontinuousadventitioussounds" => RecordLabel::Das,
            "casanddas" => RecordLabel::CasAndDas,
            "poorquality" | "pq" => RecordLabel::PoorQuality,
            _ => return Err(Error::UnknownLabelString(s.to_string())),
        };
        Ok(label)
    }
}

impl fmt::Display for EventLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl fmt::Display for RecordLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn codes_are_stable() {
        for (i, l) in EventLabel::ALL.iter().enumerate() {
            assert_eq!(l.code(), i);
            assert_eq!(EventLabel::from_code(i), Some(*l));
        }
        for (i, l) in RecordLabel::ALL.iter().enumerate() {
            assert_eq!(l.code(), i);
        }
        assert_eq!(EventLabel::from_code(7), None);
        assert_eq!(RecordLabel::from_code(5), None);
    }

    #[test]
    fn conjunction_spellings_agree() {
        for s in ["Wheeze & Crackle", "Wheeze+Crackle", "wheeze and crackle", " WHEEZE&CRACKLE "] {
            assert_eq!(EventLabel::parse(s).unwrap(), EventLabel::WheezeAndCrackle, "{s}");
        }
        assert_eq!(RecordLabel::parse("CAS & DAS").unwrap(), RecordLabel::CasAndDas);
        assert_eq!(RecordLabel::parse("Poor Quality").unwrap(), RecordLabel::PoorQuality);
        assert_eq!(EventLabel::parse("Fine Crackle").unwrap(), EventLabel::FineCrackle);
    }

    #[test]
    fn names_parse_back() {
        for l in EventLabel::ALL {
            assert_eq!(EventLabel::parse(l.name()).unwrap(), l);
            assert_eq!(EventLabel::parse(l.slug()).unwrap(), l);
        }
        for l in RecordLabel::ALL {
            assert_eq!(RecordLabel::parse(l.name()).unwrap(), l);
        }
    }

    #[test]
    fn unknown_string_is_rejected() {
        assert!(matches!(
            EventLabel::parse("squawk"),
            Err(Error::UnknownLabelString(_))
        ));
    }
}
