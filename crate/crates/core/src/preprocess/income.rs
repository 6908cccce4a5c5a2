//! World Bank income groups.
//!
//! The bundled table pins the FY2022 classification (July 2021 release)
//! and includes common alternative spellings of country names.

use std::collections::HashMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::ingestion::sanitize_country;

use super::PreprocessError;

const BUNDLED_TABLE: &str = include_str!("../../data/income_groups.csv");
pub const BUNDLED_TABLE_RELEASE: &str = "FY2022";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum IncomeGroup {
    #[serde(rename = "LIC")]
    Low,
    #[serde(rename = "LMIC")]
    LowerMiddle,
    #[serde(rename = "UMIC")]
    UpperMiddle,
    #[serde(rename = "HIC")]
    High,
}

impl IncomeGroup {
    pub const ALL: [IncomeGroup; 4] = [
        IncomeGroup::Low,
        IncomeGroup::LowerMiddle,
        IncomeGroup::UpperMiddle,
        IncomeGroup::High,
    ];

    pub fn code(self) -> &'static str {
        match self {
            IncomeGroup::Low => "LIC",
            IncomeGroup::LowerMiddle => "LMIC",
            IncomeGroup::UpperMiddle => "UMIC",
            IncomeGroup::High => "HIC",
        }
    }
}

impl fmt::Display for IncomeGroup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

impl FromStr for IncomeGroup {
    type Err = PreprocessError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        IncomeGroup::ALL
            .into_iter()
            .find(|g| g.code().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| PreprocessError::IncomeTable(format!("unknown income group {s:?}")))
    }
}

fn normalize(name: &str) -> String {
    sanitize_country(name)
        .unwrap_or_else(|_| name.trim().to_string())
        .to_ascii_lowercase()
}

/// Country name to income group lookup.
#[derive(Debug, Clone)]
pub struct IncomeGroupTable {
    by_name: HashMap<String, IncomeGroup>,
    names: Vec<String>,
}

impl IncomeGroupTable {
    /// The table shipped with the crate.
    pub fn bundled() -> Self {
        Self::from_csv(BUNDLED_TABLE).expect("bundled income table is valid")
    }

    pub fn load(path: &Path) -> Result<Self, PreprocessError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| PreprocessError::IncomeTable(format!("{}: {e}", path.display())))?;
        Self::from_csv(&text)
    }

    /// Parses a `country,group` CSV with a header row.
    pub fn from_csv(text: &str) -> Result<Self, PreprocessError> {
        let mut reader = csv::Reader::from_reader(text.as_bytes());
        let headers = reader
            .headers()
            .map_err(|e| PreprocessError::IncomeTable(e.to_string()))?
            .clone();
        if headers.len() != 2 || &headers[0] != "country" || &headers[1] != "group" {
            return Err(PreprocessError::IncomeTable(format!(
                "expected header `country,group`, got {headers:?}"
            )));
        }
        let mut by_name = HashMap::new();
        let mut names = Vec::new();
        for record in reader.records() {
            let record = record.map_err(|e| PreprocessError::IncomeTable(e.to_string()))?;
            let group: IncomeGroup = record[1].parse()?;
            let key = normalize(&record[0]);
            if let Some(prev) = by_name.insert(key, group) {
                if prev != group {
                    return Err(PreprocessError::IncomeTable(format!(
                        "conflicting groups for {}",
                        &record[0]
                    )));
                }
            }
            names.push(record[0].to_string());
        }
        Ok(Self { by_name, names })
    }

    pub fn len(&self) -> usize {
        self.by_name.len()
    }

    pub fn is_empty(&self) -> bool {
        self.by_name.is_empty()
    }

    /// Looks up a country; unknown names report the closest known names.
    pub fn assign_income_group(&self, country: &str) -> Result<IncomeGroup, PreprocessError> {
        if let Some(g) = self.by_name.get(&normalize(country)) {
            return Ok(*g);
        }
        let needle = normalize(country);
        let mut scored: Vec<(f64, &String)> = self
            .names
            .iter()
            .map(|n| (strsim::jaro_winkler(&needle, &normalize(n)), n))
            .collect();
        scored.sort_by(|a, b| b.0.total_cmp(&a.0).then_with(|| a.1.cmp(b.1)));
        Err(PreprocessError::UnknownCountry {
            country: country.to_string(),
            candidates: scored.into_iter().take(3).map(|(_, n)| n.clone()).collect(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundled_examples() {
        let t = IncomeGroupTable::bundled();
        assert_eq!(t.assign_income_group("Burundi").unwrap(), IncomeGroup::Low);
        assert_eq!(t.assign_income_group("France").unwrap(), IncomeGroup::High);
        assert_eq!(
            t.assign_income_group("Côte d'Ivoire").unwrap(),
            IncomeGroup::LowerMiddle
        );
        assert_eq!(t.assign_income_group("Cote-dIvoire").unwrap(), IncomeGroup::LowerMiddle);
        assert_eq!(t.assign_income_group("south korea").unwrap(), IncomeGroup::High);
        assert_eq!(t.assign_income_group("South-Africa").unwrap(), IncomeGroup::UpperMiddle);
    }

    #[test]
    fn unknown_country_lists_candidates() {
        let t = IncomeGroupTable::bundled();
        match t.assign_income_group("Atlantis") {
            Err(PreprocessError::UnknownCountry { candidates, .. }) => assert_eq!(candidates.len(), 3),
            other => panic!("{other:?}"),
        }
        match t.assign_income_group("Burundii") {
            Err(PreprocessError::UnknownCountry { candidates, .. }) => assert_eq!(candidates[0], "Burundi"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn csv_validation() {
        assert!(IncomeGroupTable::from_csv("name,grp\nX,LIC\n").is_err());
        assert!(IncomeGroupTable::from_csv("country,group\nX,MIC\n").is_err());
        assert!(IncomeGroupTable::from_csv("country,group\nX,LIC\nX,HIC\n").is_err());
        let t = IncomeGroupTable::from_csv("country,group\n\"Korea, Rep.\",HIC\n").unwrap();
        assert_eq!(t.assign_income_group("Korea, Rep.").unwrap(), IncomeGroup::High);
    }
}
