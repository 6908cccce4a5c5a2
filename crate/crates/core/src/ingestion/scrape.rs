//! Family index discovery.
//!
//! The source exposes an `index.html` that links family pages with
//! `<a class="family" href="...">`. Each family page carries one element
//! with `data-family-id`, `data-country` and `data-consumption` attributes
//! and one `<img class="wealth" data-category="..." src="...">` per photo.

use std::collections::BTreeMap;
use std::sync::OnceLock;

use regex::Regex;
use url::Url;

use crate::category::Category;

use super::fetch::Fetch;
use super::{HouseholdMeta, IngestError, ScrapeConfig};

/// One discovered household and the remote URLs of its requested categories.
#[derive(Debug, Clone, PartialEq)]
pub struct FamilyEntry {
    pub meta: HouseholdMeta,
    pub images: Vec<(Category, Url)>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct FamilyIndex {
    /// Sorted by family id.
    pub families: Vec<FamilyEntry>,
    /// Family pages that were skipped, with a diagnostic each.
    pub skipped: Vec<(String, String)>,
}

fn family_link_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r#"<a\b[^>]*\bclass="family"[^>]*\bhref="([^"]+)""#).unwrap())
}

fn attr(tag: &str, name: &str) -> Option<String> {
    let re = Regex::new(&format!(r#"\b{}="([^"]*)""#, regex::escape(name))).unwrap();
    re.captures(tag).map(|c| html_unescape(&c[1]))
}

fn html_unescape(s: &str) -> String {
    s.replace("&#39;", "'")
        .replace("&apos;", "'")
        .replace("&quot;", "\"")
        .replace("&lt;", "<")
        .replace("&gt;", ">")
        .replace("&amp;", "&")
}

fn tags<'a>(html: &'a str, name: &str) -> impl Iterator<Item = &'a str> + 'a {
    let re = Regex::new(&format!(r"<{}\b[^>]*>", regex::escape(name))).unwrap();
    re.find_iter(html).map(|m| m.as_str()).collect::<Vec<_>>().into_iter()
}

/// Parses a family page. Only the first image of each requested category
/// is kept.
pub fn parse_family_page(html: &str, page_url: &Url, categories: &[Category]) -> Result<FamilyEntry, String> {
    let holder = tags(html, "div")
        .chain(tags(html, "section"))
        .chain(tags(html, "body"))
        .find(|t| t.contains("data-family-id="))
        .ok_or("no element with data-family-id")?;
    let family_id = attr(holder, "data-family-id")
        .filter(|s| !s.is_empty())
        .ok_or("empty family id")?;
    let country = attr(holder, "data-country")
        .map(|s| s.trim().to_string())
        .filter(|s| !s.is_empty())
        .ok_or("missing country")?;
    let consumption: f64 = attr(holder, "data-consumption")
        .ok_or("missing consumption")?
        .trim()
        .parse()
        .map_err(|_| "consumption is not a number".to_string())?;
    if !(consumption.is_finite() && consumption > 0.0) {
        return Err(format!("consumption must be positive, got {consumption}"));
    }

    let mut images: BTreeMap<Category, Url> = BTreeMap::new();
    for img in tags(html, "img").filter(|t| t.contains(r#"class="wealth""#)) {
        let Some(category) = attr(img, "data-category").and_then(|c| c.parse::<Category>().ok()) else {
            continue;
        };
        if !categories.contains(&category) || images.contains_key(&category) {
            continue;
        }
        let src = attr(img, "src").ok_or("wealth image without src")?;
        let url = page_url.join(&src).map_err(|e| format!("bad image src {src:?}: {e}"))?;
        images.insert(category, url);
    }
    let mut images: Vec<_> = images.into_iter().collect();
    images.sort_by_key(|(c, _)| categories.iter().position(|x| x == c));

    Ok(FamilyEntry {
        meta: HouseholdMeta {
            family_id,
            country,
            monthly_consumption_usd: consumption,
        },
        images,
    })
}

/// Discovers every family reachable from the source index.
///
/// Failure to fetch the index is fatal (and retryable); a malformed or
/// unreachable family page only skips that family.
pub fn scrape_family_index(config: &ScrapeConfig, fetcher: &dyn Fetch) -> Result<FamilyIndex, IngestError> {
    config.validate()?;
    let base = config.base_url()?;
    let index_url = base
        .join("index.html")
        .map_err(|e| IngestError::Config(e.to_string()))?;
    let index_html = fetcher.get(&index_url).map_err(|e| IngestError::Index {
        retryable: e.is_retryable(),
        source: e,
    })?;
    let index_html = String::from_utf8_lossy(&index_html);

    let mut links: Vec<Url> = Vec::new();
    for cap in family_link_re().captures_iter(&index_html) {
        match index_url.join(&html_unescape(&cap[1])) {
            Ok(u) if !links.contains(&u) => links.push(u),
            Ok(_) => {}
            Err(e) => log::warn!("ignoring bad family link {:?}: {e}", &cap[1]),
        }
    }

    let mut out = FamilyIndex::default();
    for link in links {
        let page = match fetcher.get(&link) {
            Ok(bytes) => String::from_utf8_lossy(&bytes).into_owned(),
            Err(e) => {
                log::warn!("skipping {link}: {e}");
                out.skipped.push((link.to_string(), e.to_string()));
                continue;
            }
        };
        match parse_family_page(&page, &link, &config.categories) {
            Ok(entry) => out.families.push(entry),
            Err(diag) => {
                log::warn!("skipping {link}: {diag}");
                out.skipped.push((link.to_string(), diag));
            }
        }
    }
    out.families.sort_by(|a, b| a.meta.family_id.cmp(&b.meta.family_id));
    let before = out.families.len();
    out.families.dedup_by(|a, b| a.meta.family_id == b.meta.family_id);
    if out.families.len() != before {
        log::warn!("{} duplicate family pages ignored", before - out.families.len());
    }
    Ok(out)
}
