use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{HouseholdRecord, IncomeGroup, PreprocessError};

pub const DAYS_PER_MONTH: u32 = 30;
/// The international extreme poverty line in USD per day.
pub const UNIFORM_DAILY_LINE: f64 = 1.9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyMode {
    Uniform,
    ByIncomeGroup,
}

/// Extreme-poverty labeling rule: a daily line per income group, applied
/// over a 30-day month.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PovertyPolicy {
    pub mode: PolicyMode,
    pub daily_lines_usd: BTreeMap<IncomeGroup, f64>,
    pub days_per_month: u32,
}

impl PovertyPolicy {
    /// $1.9 a day for every country.
    pub fn uniform() -> Self {
        Self::uniform_line(UNIFORM_DAILY_LINE)
    }

    pub fn uniform_line(daily_usd: f64) -> Self {
        Self {
            mode: PolicyMode::Uniform,
            daily_lines_usd: IncomeGroup::ALL.iter().map(|g| (*g, daily_usd)).collect(),
            days_per_month: DAYS_PER_MONTH,
        }
    }

    /// $1.9, $3.2, $5.5 and $21.7 a day for LIC, LMIC, UMIC and HIC.
    pub fn by_income_group() -> Self {
        Self {
            mode: PolicyMode::ByIncomeGroup,
            daily_lines_usd: BTreeMap::from([
                (IncomeGroup::Low, 1.9),
                (IncomeGroup::LowerMiddle, 3.2),
                (IncomeGroup::UpperMiddle, 5.5),
                (IncomeGroup::High, 21.7),
            ]),
            days_per_month: DAYS_PER_MONTH,
        }
    }

    pub fn validate(&self) -> Result<(), PreprocessError> {
        if self.days_per_month != DAYS_PER_MONTH {
            return Err(PreprocessError::Policy(format!(
                "days_per_month must be {DAYS_PER_MONTH}"
            )));
        }
        for g in IncomeGroup::ALL {
            match self.daily_lines_usd.get(&g) {
                Some(l) if l.is_finite() && *l > 0.0 => {}
                _ => return Err(PreprocessError::Policy(format!("missing or non-positive line for {g}"))),
            }
        }
        if self.mode == PolicyMode::Uniform {
            let first = self.daily_lines_usd.values().next().unwrap();
            if self.daily_lines_usd.values().any(|l| l != first) {
                return Err(PreprocessError::Policy("uniform policy has differing lines".into()));
            }
        }
        Ok(())
    }

    /// Monthly cutoff in USD, rounded to cents.
    pub fn monthly_threshold(&self, group: IncomeGroup) -> f64 {
        let daily = self.daily_lines_usd[&group];
        (daily * self.days_per_month as f64 * 100.0).round() / 100.0
    }

    /// `1` when monthly consumption does not exceed the applicable cutoff.
    pub fn label(&self, record: &HouseholdRecord) -> Result<u8, PreprocessError> {
        let group = match (self.mode, record.income_group) {
            (_, Some(g)) => g,
            (PolicyMode::Uniform, None) => IncomeGroup::Low,
            (PolicyMode::ByIncomeGroup, None) => {
                return Err(PreprocessError::MissingIncomeGroup(record.family_id.clone()))
            }
        };
        Ok(u8::from(
            record.monthly_consumption_usd <= self.monthly_threshold(group),
        ))
    }
}

/// Labels a record under `policy`.
pub fn label_poverty(record: &HouseholdRecord, policy: &PovertyPolicy) -> Result<u8, PreprocessError> {
    policy.label(record)
}
