use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::Error;

/// Which group of dense layers a re-parameterization plan targets.
///
/// `QKV` covers the query, key and value projections together; `Project` the
/// attention output projection; `FFN1`/`FFN2` the two feed-forward linears;
/// `FFN_M1`/`FFN_M2` the Macaron feed-forward pair (Conformer only); `CLS`
/// the classifier head. `ALL` stands for every group the family has.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ModuleSelector {
    QKV,
    Project,
    FFN1,
    FFN2,
    #[serde(rename = "FFN_M1")]
    FfnM1,
    #[serde(rename = "FFN_M2")]
    FfnM2,
    CLS,
    ALL,
}

impl ModuleSelector {
    pub fn name(self) -> &'static str {
        match self {
            ModuleSelector::QKV => "QKV",
            ModuleSelector::Project => "Project",
            ModuleSelector::FFN1 => "FFN1",
            ModuleSelector::FFN2 => "FFN2",
            ModuleSelector::FfnM1 => "FFN_M1",
            ModuleSelector::FfnM2 => "FFN_M2",
            ModuleSelector::CLS => "CLS",
            ModuleSelector::ALL => "ALL",
        }
    }

    pub fn is_macaron(self) -> bool {
        matches!(self, ModuleSelector::FfnM1 | ModuleSelector::FfnM2)
    }
}

impl fmt::Display for ModuleSelector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModuleSelector {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let key = s.to_ascii_uppercase().replace(['_', '-', ' '], "");
        Ok(match key.as_str() {
            "QKV" => ModuleSelector::QKV,
            "PROJECT" | "PROJ" | "O" => ModuleSelector::Project,
            "FFN1" => ModuleSelector::FFN1,
            "FFN2" => ModuleSelector::FFN2,
            "FFNM1" => ModuleSelector::FfnM1,
            "FFNM2" => ModuleSelector::FfnM2,
            "CLS" => ModuleSelector::CLS,
            "ALL" => ModuleSelector::ALL,
            _ => return Err(Error::invalid(format!("unknown module selector {s:?}"))),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_round_trip_through_parse_and_serde() {
        use ModuleSelector::*;
        for s in [QKV, Project, FFN1, FFN2, FfnM1, FfnM2, CLS, ALL] {
            assert_eq!(s.name().parse::<ModuleSelector>().unwrap(), s);
            let json = serde_json::to_string(&s).unwrap();
            assert_eq!(json, format!("\"{}\"", s.name()));
        }
        assert_eq!("ffn-m1".parse::<ModuleSelector>().unwrap(), FfnM1);
        assert!("attention".parse::<ModuleSelector>().is_err());
    }
}
