//! Generated data with known ground truth, used by tests, benchmarks and
//! the offline demo.
//!
//! Images are flat grey tiles with per-pixel texture. A tile's brightness is
//! the mean of its RGB bytes over 255, which is what the generating
//! functions below are defined on.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use image::{DynamicImage, Rgb, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::category::Category;
use crate::ingestion::HouseholdMeta;
use crate::preprocess::{compose_mosaic, MosaicSpec};

/// Textured tile whose mean level is close to `level` (0 black, 1 white).
pub fn textured_tile(level: f64, px: u32, rng: &mut impl Rng) -> RgbImage {
    let base = level.clamp(0.0, 1.0) * 255.0;
    let tint = [rng.random_range(-12.0..12.0), rng.random_range(-12.0..12.0), 0.0];
    RgbImage::from_fn(px, px, |_, _| {
        let jitter: f64 = rng.random_range(-25.0..25.0);
        Rgb(std::array::from_fn(|c| {
            (base + tint[c] + jitter).round().clamp(0.0, 255.0) as u8
        }))
    })
}

pub fn brightness(img: &RgbImage) -> f64 {
    let sum: u64 = img.as_raw().iter().map(|&b| u64::from(b)).sum();
    sum as f64 / (img.as_raw().len() as f64 * 255.0)
}

/// Mosaics whose target is an affine function of mean tile brightness plus
/// Gaussian noise.
#[derive(Debug, Clone)]
pub struct RegressionSet {
    pub images: Vec<DynamicImage>,
    pub targets: Vec<f64>,
    /// Mean brightness of the seven tiles of each mosaic.
    pub tile_brightness: Vec<f64>,
    pub intercept: f64,
    pub slope: f64,
    pub noise_sd: f64,
}

impl RegressionSet {
    /// The generating function without noise.
    pub fn signal(&self, tile_brightness: f64) -> f64 {
        self.intercept + self.slope * tile_brightness
    }
}

/// Tile levels span [LEVEL_LO, LEVEL_HI] before texture.
const LEVEL_LO: f64 = 0.15;
const LEVEL_HI: f64 = 0.85;

/// `n` merged-input mosaics with `tile_px` tiles. Targets live on a
/// log-consumption-like scale (about 2.9 to 7.1) and the noise standard
/// deviation is 5% of the target range.
pub fn regression_mosaics(n: usize, tile_px: u32, seed: u64) -> RegressionSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let spec = MosaicSpec::with_tile_px(tile_px);
    let (intercept, slope) = (2.0, 6.0);
    let noise_sd = 0.05 * slope * (LEVEL_HI - LEVEL_LO);
    let noise = rand_distr::Normal::new(0.0, noise_sd).expect("positive sd");
    let mut set = RegressionSet {
        images: Vec::with_capacity(n),
        targets: Vec::with_capacity(n),
        tile_brightness: Vec::with_capacity(n),
        intercept,
        slope,
        noise_sd,
    };
    for _ in 0..n {
        let wealth: f64 = rng.random_range(0.0..1.0);
        let tiles: [Option<DynamicImage>; 7] = std::array::from_fn(|_| {
            let w = (wealth + rng.random_range(-0.08..0.08)).clamp(0.0, 1.0);
            Some(DynamicImage::ImageRgb8(textured_tile(
                LEVEL_LO + (LEVEL_HI - LEVEL_LO) * w,
                tile_px,
                &mut rng,
            )))
        });
        let b = tiles.iter().flatten().map(|t| brightness(&t.to_rgb8())).sum::<f64>() / 7.0;
        let mosaic = compose_mosaic(&tiles, &spec).expect("seven tiles");
        set.targets.push(intercept + slope * b + rng.sample(noise));
        set.tile_brightness.push(b);
        set.images.push(DynamicImage::ImageRgb8(mosaic));
    }
    set
}

/// Single images in two classes: label 1 is dark, label 0 is light, with
/// a wide gap between the two brightness bands.
pub fn classification_images(n_per_class: usize, px: u32, seed: u64) -> (Vec<DynamicImage>, Vec<u8>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut images = Vec::with_capacity(2 * n_per_class);
    let mut labels = Vec::with_capacity(2 * n_per_class);
    for i in 0..2 * n_per_class {
        let label = (i % 2) as u8;
        let level = if label == 1 {
            rng.random_range(0.10..0.30)
        } else {
            rng.random_range(0.70..0.90)
        };
        images.push(DynamicImage::ImageRgb8(textured_tile(level, px, &mut rng)));
        labels.push(label);
    }
    (images, labels)
}

/// One household of a fixture mirror.
#[derive(Debug, Clone, PartialEq)]
pub struct FixtureHousehold {
    pub meta: HouseholdMeta,
    /// Photo brightness per published category.
    pub photos: BTreeMap<Category, f64>,
}

const FIXTURE_COUNTRIES: [&str; 12] = [
    "Burundi",
    "Malawi",
    "Nepal",
    "India",
    "Nigeria",
    "Bangladesh",
    "China",
    "Brazil",
    "Mexico",
    "Sweden",
    "United States",
    "Cote d'Ivoire",
];

/// Random households with log-uniform consumption between $20 and $3000;
/// brighter photos go with higher consumption.
pub fn fixture_households(n: usize, seed: u64) -> Vec<FixtureHousehold> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let w: f64 = rng.random_range(0.0..1.0);
            let consumption = (20f64.ln() + w * (3000f64.ln() - 20f64.ln())).exp();
            let mut photos = BTreeMap::new();
            for c in Category::ALL {
                if rng.random_bool(0.85) {
                    let level = (w + rng.random_range(-0.05..0.05)).clamp(0.0, 1.0);
                    photos.insert(c, LEVEL_LO + (LEVEL_HI - LEVEL_LO) * level);
                }
            }
            FixtureHousehold {
                meta: HouseholdMeta {
                    family_id: format!("fam{i:04}"),
                    country: FIXTURE_COUNTRIES[rng.random_range(0..FIXTURE_COUNTRIES.len())].to_string(),
                    monthly_consumption_usd: (consumption * 100.0).round() / 100.0,
                },
                photos,
            }
        })
        .collect()
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('"', "&quot;")
        .replace('\'', "&#39;")
        .replace('<', "&lt;")
}

/// Writes a static mirror of the photo site: `index.html`,
/// `families/{id}.html` and `img/{id}-{category}.jpg`.
pub fn write_fixture_site(
    dir: &Path,
    households: &[FixtureHousehold],
    photo_px: u32,
    seed: u64,
) -> std::io::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    fs::create_dir_all(dir.join("families"))?;
    fs::create_dir_all(dir.join("img"))?;
    let mut index = String::from("<html><body><ul>\n");
    for h in households {
        let id = &h.meta.family_id;
        writeln!(
            index,
            r#"<li><a class="family" href="families/{id}.html">{id}</a></li>"#
        )
        .unwrap();
        let mut page = format!(
            "<html><body>\n<div class=\"household\" data-family-id=\"{}\" data-country=\"{}\" data-consumption=\"{:.2}\">\n",
            escape(id),
            escape(&h.meta.country),
            h.meta.monthly_consumption_usd
        );
        for (category, level) in &h.photos {
            let file = format!("{id}-{}.jpg", category.slug());
            textured_tile(*level, photo_px, &mut rng)
                .save(dir.join("img").join(&file))
                .map_err(std::io::Error::other)?;
            writeln!(
                page,
                r#"<img class="wealth" data-category="{}" src="../img/{file}">"#,
                category.slug()
            )
            .unwrap();
        }
        page.push_str("</div>\n</body></html>\n");
        fs::write(dir.join("families").join(format!("{id}.html")), page)?;
    }
    index.push_str("</ul></body></html>\n");
    fs::write(dir.join("index.html"), index)
}
