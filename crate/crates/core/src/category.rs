use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// One of the seven wealth-object categories used as model inputs.
///
/// The declaration order is the canonical order used for mosaics and
/// summary tables.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Category {
    Bathrooms,
    Bedrooms,
    LivingRooms,
    PlacesForDinner,
    Roofs,
    Showers,
    Stoves,
}

impl Category {
    pub const ALL: [Category; 7] = [
        Category::Bathrooms,
        Category::Bedrooms,
        Category::LivingRooms,
        Category::PlacesForDinner,
        Category::Roofs,
        Category::Showers,
        Category::Stoves,
    ];

    pub fn slug(self) -> &'static str {
        match self {
            Category::Bathrooms => "bathrooms",
            Category::Bedrooms => "bedrooms",
            Category::LivingRooms => "living-rooms",
            Category::PlacesForDinner => "places-for-dinner",
            Category::Roofs => "roofs",
            Category::Showers => "showers",
            Category::Stoves => "stoves",
        }
    }

    /// Zero-based position in the canonical order.
    pub fn index(self) -> usize {
        Category::ALL.iter().position(|c| *c == self).unwrap()
    }

    /// Parses a comma separated list of slugs, e.g. `stoves,roofs`.
    pub fn parse_list(s: &str) -> Result<Vec<Category>, UnknownCategory> {
        s.split(',')
            .map(str::trim)
            .filter(|p| !p.is_empty())
            .map(str::parse)
            .collect()
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.slug())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown category slug `{0}`")]
pub struct UnknownCategory(pub String);

impl FromStr for Category {
    type Err = UnknownCategory;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Category::ALL
            .iter()
            .copied()
            .find(|c| c.slug() == s)
            .ok_or_else(|| UnknownCategory(s.to_string()))
    }
}
