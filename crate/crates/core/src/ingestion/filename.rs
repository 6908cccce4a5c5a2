//! Canonical asset filenames.
//!
//! Grammar: `{consumption:.2}__{country}__{family_id}__{category}__{index:02}.jpg`
//! where `country` has been through [`sanitize_country`].

use std::fmt;

use crate::category::Category;

use super::HouseholdMeta;

pub const EXTENSION: &str = ".jpg";
const SEP: &str = "__";

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum FilenameError {
    #[error("field `{field}` is not representable in a filename: {value:?}")]
    Unrepresentable { field: &'static str, value: String },
    #[error("consumption must be positive and finite, got {0}")]
    BadConsumption(String),
    #[error("cannot parse `{name}` at byte {position}: {reason}")]
    Parse {
        name: String,
        position: usize,
        reason: &'static str,
    },
}

/// The decoded fields of a canonical asset filename.
#[derive(Debug, Clone, PartialEq)]
pub struct AssetName {
    pub consumption: f64,
    pub country: String,
    pub family_id: String,
    pub category: Category,
    pub index: u16,
}

impl fmt::Display for AssetName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{:.2}{SEP}{}{SEP}{}{SEP}{}{SEP}{:02}{EXTENSION}",
            self.consumption, self.country, self.family_id, self.category, self.index
        )
    }
}

fn fold_char(c: char) -> Option<&'static str> {
    Some(match c {
        'à' | 'á' | 'â' | 'ã' | 'ä' | 'å' | 'ā' => "a",
        'À' | 'Á' | 'Â' | 'Ã' | 'Ä' | 'Å' | 'Ā' => "A",
        'æ' => "ae",
        'Æ' => "AE",
        'ç' | 'č' => "c",
        'Ç' | 'Č' => "C",
        'è' | 'é' | 'ê' | 'ë' | 'ē' => "e",
        'È' | 'É' | 'Ê' | 'Ë' | 'Ē' => "E",
        'ì' | 'í' | 'î' | 'ï' | 'ī' => "i",
        'Ì' | 'Í' | 'Î' | 'Ï' | 'Ī' => "I",
        'ñ' => "n",
        'Ñ' => "N",
        'ò' | 'ó' | 'ô' | 'õ' | 'ö' | 'ø' | 'ō' => "o",
        'Ò' | 'Ó' | 'Ô' | 'Õ' | 'Ö' | 'Ø' | 'Ō' => "O",
        'ß' => "ss",
        'š' => "s",
        'Š' => "S",
        'ù' | 'ú' | 'û' | 'ü' | 'ū' => "u",
        'Ù' | 'Ú' | 'Û' | 'Ü' | 'Ū' => "U",
        'ý' | 'ÿ' => "y",
        'Ý' => "Y",
        'ž' => "z",
        'Ž' => "Z",
        _ => return None,
    })
}

/// ASCII-folds a country name and replaces whitespace runs with a hyphen.
/// Apostrophes, periods and commas are dropped.
///
/// `"Côte d'Ivoire"` becomes `"Cote-dIvoire"`.
pub fn sanitize_country(country: &str) -> Result<String, FilenameError> {
    let mut out = String::with_capacity(country.len());
    let mut pending_hyphen = false;
    for c in country.trim().chars() {
        if c.is_whitespace() || c == '-' || c == '_' {
            pending_hyphen = !out.is_empty();
            continue;
        }
        if matches!(c, '\'' | '\u{2019}' | '\u{2018}' | '.' | ',' | '(' | ')') {
            continue;
        }
        let folded = if c.is_ascii_alphanumeric() {
            None
        } else {
            Some(fold_char(c).ok_or_else(|| FilenameError::Unrepresentable {
                field: "country",
                value: country.to_string(),
            })?)
        };
        if pending_hyphen {
            out.push('-');
            pending_hyphen = false;
        }
        match folded {
            Some(s) => out.push_str(s),
            None => out.push(c),
        }
    }
    if out.is_empty() {
        return Err(FilenameError::Unrepresentable {
            field: "country",
            value: country.to_string(),
        });
    }
    Ok(out)
}

fn valid_family_id(id: &str) -> bool {
    !id.is_empty()
        && !id.contains(SEP)
        && !id.starts_with('_')
        && !id.ends_with('_')
        && id.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_')
}

/// Builds the canonical filename for one asset of a household.
pub fn encode_asset_filename(meta: &HouseholdMeta, category: Category, index: u16) -> Result<String, FilenameError> {
    let c = meta.monthly_consumption_usd;
    if !(c.is_finite() && c > 0.0) {
        return Err(FilenameError::BadConsumption(c.to_string()));
    }
    if format!("{c:.2}") == "0.00" {
        return Err(FilenameError::BadConsumption(c.to_string()));
    }
    if !valid_family_id(&meta.family_id) {
        return Err(FilenameError::Unrepresentable {
            field: "family_id",
            value: meta.family_id.clone(),
        });
    }
    let name = AssetName {
        consumption: c,
        country: sanitize_country(&meta.country)?,
        family_id: meta.family_id.clone(),
        category,
        index,
    };
    Ok(name.to_string())
}

/// Inverse of [`encode_asset_filename`]. The consumption comes back rounded
/// to cents and the country in sanitized form.
pub fn parse_asset_filename(name: &str) -> Result<AssetName, FilenameError> {
    let err = |position: usize, reason: &'static str| FilenameError::Parse {
        name: name.to_string(),
        position,
        reason,
    };
    let stem = name
        .strip_suffix(EXTENSION)
        .ok_or_else(|| err(name.len(), "missing .jpg extension"))?;
    let mut fields = Vec::with_capacity(5);
    let mut offset = 0;
    for part in stem.split(SEP) {
        fields.push((offset, part));
        offset += part.len() + SEP.len();
    }
    if fields.len() != 5 {
        return Err(err(0, "expected 5 fields separated by `__`"));
    }
    let (pos, consumption) = fields[0];
    let valid_money = consumption
        .split_once('.')
        .is_some_and(|(w, f)| !w.is_empty() && f.len() == 2 && (w.to_string() + f).bytes().all(|b| b.is_ascii_digit()));
    if !valid_money {
        return Err(err(pos, "consumption must look like 123.45"));
    }
    let consumption: f64 = consumption.parse().map_err(|_| err(pos, "bad consumption"))?;
    if consumption <= 0.0 {
        return Err(err(pos, "consumption must be positive"));
    }
    let (pos, country) = fields[1];
    if sanitize_country(country).as_deref() != Ok(country) {
        return Err(err(pos, "country is not in sanitized form"));
    }
    let (pos, family_id) = fields[2];
    if !valid_family_id(family_id) {
        return Err(err(pos, "invalid family id"));
    }
    let (pos, category) = fields[3];
    let category: Category = category.parse().map_err(|_| err(pos, "unknown category"))?;
    let (pos, index_str) = fields[4];
    let index: u16 = index_str
        .parse()
        .ok()
        .filter(|i| format!("{i:02}") == index_str)
        .ok_or_else(|| err(pos, "index must be a zero-padded two digit number"))?;
    Ok(AssetName {
        consumption,
        country: country.to_string(),
        family_id: family_id.to_string(),
        category,
        index,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn meta(c: f64, country: &str, id: &str) -> HouseholdMeta {
        HouseholdMeta {
            family_id: id.into(),
            country: country.into(),
            monthly_consumption_usd: c,
        }
    }

    #[test]
    fn encodes_example() {
        let name = encode_asset_filename(&meta(54.20, "Burundi", "f017"), Category::Stoves, 1).unwrap();
        assert_eq!(name, "54.20__Burundi__f017__stoves__01.jpg");
    }

    #[test]
    fn parses_example() {
        let n = parse_asset_filename("54.20__Burundi__f017__stoves__01.jpg").unwrap();
        assert_eq!(n.consumption, 54.20);
        assert_eq!(n.country, "Burundi");
        assert_eq!(n.family_id, "f017");
        assert_eq!(n.category, Category::Stoves);
        assert_eq!(n.index, 1);
    }

    #[test]
    fn sanitizes_countries() {
        assert_eq!(sanitize_country("Cote d'Ivoire").unwrap(), "Cote-dIvoire");
        assert_eq!(sanitize_country("Côte d’Ivoire").unwrap(), "Cote-dIvoire");
        assert_eq!(sanitize_country("  South   Africa ").unwrap(), "South-Africa");
        assert_eq!(sanitize_country("Congo, Dem. Rep.").unwrap(), "Congo-Dem-Rep");
        assert!(matches!(
            sanitize_country("日本"),
            Err(FilenameError::Unrepresentable { field: "country", .. })
        ));
    }

    #[test]
    fn rejects_bad_fields() {
        assert!(matches!(
            encode_asset_filename(&meta(0.0, "Burundi", "f1"), Category::Stoves, 1),
            Err(FilenameError::BadConsumption(_))
        ));
        assert!(matches!(
            encode_asset_filename(&meta(1.0, "Burundi", "a__b"), Category::Stoves, 1),
            Err(FilenameError::Unrepresentable { field: "family_id", .. })
        ));
        assert!(matches!(
            encode_asset_filename(&meta(1.0, "Burundi", "a/b"), Category::Stoves, 1),
            Err(FilenameError::Unrepresentable { field: "family_id", .. })
        ));
    }

    #[test]
    fn parse_errors_carry_position() {
        assert!(matches!(
            parse_asset_filename("garbage.jpg"),
            Err(FilenameError::Parse { .. })
        ));
        assert!(parse_asset_filename("54.20__Burundi__f017__stoves__01.png").is_err());
        assert!(parse_asset_filename("54.2__Burundi__f017__stoves__01.jpg").is_err());
        assert!(parse_asset_filename("54.20__Burundi__f017__kitchens__01.jpg").is_err());
        assert!(parse_asset_filename("54.20__Burundi__f017__stoves__1.jpg").is_err());
        assert!(parse_asset_filename("54.20__Burundi__f017__stoves__001.jpg").is_err());
        match parse_asset_filename("54.20__Burundi__f017__kitchens__01.jpg") {
            Err(FilenameError::Parse { position, .. }) => assert_eq!(position, 22),
            other => panic!("{other:?}"),
        }
    }

    fn country_strategy() -> impl Strategy<Value = String> {
        prop::collection::vec("[A-Z][a-z]{1,8}", 1..4).prop_map(|w| w.join("-"))
    }

    fn family_strategy() -> impl Strategy<Value = String> {
        "[a-z0-9]{1,6}(-[a-z0-9]{1,4})?(_[a-z0-9]{1,4})?"
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn filename_round_trip(
            cents in 1u64..100_000_000,
            country in country_strategy(),
            family in family_strategy(),
            cat in 0usize..7,
            index in 0u16..1000,
        ) {
            let c = cents as f64 / 100.0;
            let category = Category::ALL[cat];
            let name = encode_asset_filename(&meta(c, &country, &family), category, index).unwrap();
            let parsed = parse_asset_filename(&name).unwrap();
            prop_assert_eq!(parsed, AssetName { consumption: c, country, family_id: family, category, index });
        }
    }
}
