//! Merged inputs: the seven category photos tiled on one square canvas.
//!
//! Tiles go left to right, then top to bottom, in canonical category order
//! on a 3×3 grid. Missing categories and the two trailing cells stay white.

use std::path::{Path, PathBuf};

use image::imageops::FilterType;
use image::{DynamicImage, Rgb, RgbImage};
use serde::{Deserialize, Serialize};

use crate::category::Category;

use super::{HouseholdRecord, PreprocessError};

pub const MOSAIC_DIR: &str = "mosaics";
pub const WHITE: [u8; 3] = [255, 255, 255];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MosaicSpec {
    pub category_order: [Category; 7],
    pub rows: u32,
    pub cols: u32,
    pub tile_px: u32,
    pub fill: [u8; 3],
}

impl Default for MosaicSpec {
    fn default() -> Self {
        Self::with_tile_px(224)
    }
}

impl MosaicSpec {
    pub fn with_tile_px(tile_px: u32) -> Self {
        Self {
            category_order: Category::ALL,
            rows: 3,
            cols: 3,
            tile_px,
            fill: WHITE,
        }
    }

    pub fn side_px(&self) -> u32 {
        self.rows * self.tile_px
    }

    /// Top-left pixel of grid cell `cell` (zero-based, row-major).
    pub fn cell_origin(&self, cell: usize) -> (u32, u32) {
        let cell = cell as u32;
        ((cell % self.cols) * self.tile_px, (cell / self.cols) * self.tile_px)
    }

    pub fn validate(&self) -> Result<(), PreprocessError> {
        if self.rows != 3 || self.cols != 3 || self.tile_px == 0 || self.category_order != Category::ALL {
            return Err(PreprocessError::Mosaic(
                "mosaics use a 3x3 grid in canonical category order with a positive tile size".into(),
            ));
        }
        Ok(())
    }
}

/// Tiles already-decoded images; `tiles` is indexed by canonical category
/// position.
pub fn compose_mosaic(tiles: &[Option<DynamicImage>; 7], spec: &MosaicSpec) -> Result<RgbImage, PreprocessError> {
    spec.validate()?;
    if tiles.iter().all(Option::is_none) {
        return Err(PreprocessError::NoImages(String::new()));
    }
    let side = spec.side_px();
    let mut canvas = RgbImage::from_pixel(side, side, Rgb(spec.fill));
    for (cell, category) in spec.category_order.iter().enumerate() {
        let Some(img) = &tiles[category.index()] else { continue };
        let tile = img
            .resize_exact(spec.tile_px, spec.tile_px, FilterType::Triangle)
            .to_rgb8();
        let (x, y) = spec.cell_origin(cell);
        image::imageops::replace(&mut canvas, &tile, x as i64, y as i64);
    }
    Ok(canvas)
}

/// Loads a household's photos and composes its mosaic.
pub fn build_mosaic(record: &HouseholdRecord, spec: &MosaicSpec) -> Result<RgbImage, PreprocessError> {
    let mut tiles: [Option<DynamicImage>; 7] = Default::default();
    for c in record.present_categories() {
        let path = record.image(c).unwrap();
        let img = image::open(path).map_err(|e| PreprocessError::Image {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        tiles[c.index()] = Some(img);
    }
    compose_mosaic(&tiles, spec).map_err(|e| match e {
        PreprocessError::NoImages(_) => PreprocessError::NoImages(record.family_id.clone()),
        other => other,
    })
}

pub fn mosaic_path(root: &Path, family_id: &str) -> PathBuf {
    root.join(MOSAIC_DIR).join(format!("{family_id}.png"))
}

/// Writes `{root}/mosaics/{family_id}.png` for every record, fanning out
/// over worker threads. Returns one result per record, in input order.
pub fn write_mosaics(
    records: &[HouseholdRecord],
    spec: &MosaicSpec,
    root: &Path,
) -> Vec<Result<PathBuf, PreprocessError>> {
    let workers = std::thread::available_parallelism()
        .map_or(1, |n| n.get())
        .min(records.len().max(1));
    let chunk = records.len().div_ceil(workers).max(1);
    let dir = root.join(MOSAIC_DIR);
    if let Err(e) = std::fs::create_dir_all(&dir) {
        let msg = e.to_string();
        return records
            .iter()
            .map(|_| {
                Err(PreprocessError::Io {
                    path: dir.display().to_string(),
                    message: msg.clone(),
                })
            })
            .collect();
    }
    std::thread::scope(|scope| {
        let handles: Vec<_> = records
            .chunks(chunk)
            .map(|part| {
                scope.spawn(move || {
                    part.iter()
                        .map(|r| {
                            let img = build_mosaic(r, spec)?;
                            let path = mosaic_path(root, &r.family_id);
                            img.save(&path).map_err(|e| PreprocessError::Io {
                                path: path.display().to_string(),
                                message: e.to_string(),
                            })?;
                            Ok(path)
                        })
                        .collect::<Vec<_>>()
                })
            })
            .collect();
        handles.into_iter().flat_map(|h| h.join().unwrap()).collect()
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn solid(w: u32, h: u32, v: u8) -> DynamicImage {
        DynamicImage::ImageRgb8(RgbImage::from_pixel(w, h, Rgb([v, v / 2, v / 3])))
    }

    fn cell_pixels(img: &RgbImage, spec: &MosaicSpec, cell: usize) -> Vec<[u8; 3]> {
        let (x0, y0) = spec.cell_origin(cell);
        let mut out = Vec::new();
        for y in y0..y0 + spec.tile_px {
            for x in x0..x0 + spec.tile_px {
                out.push(img.get_pixel(x, y).0);
            }
        }
        out
    }

    #[test]
    fn all_present_has_seven_tiles_and_two_white_cells() {
        let spec = MosaicSpec::with_tile_px(8);
        let tiles: [Option<DynamicImage>; 7] = std::array::from_fn(|i| Some(solid(30, 20, 10 + i as u8 * 20)));
        let m = compose_mosaic(&tiles, &spec).unwrap();
        assert_eq!(m.dimensions(), (24, 24));
        for cell in 0..7 {
            let v = 10 + cell as u8 * 20;
            assert!(cell_pixels(&m, &spec, cell).iter().all(|p| *p == [v, v / 2, v / 3]));
        }
        for cell in [7, 8] {
            assert!(cell_pixels(&m, &spec, cell).iter().all(|p| *p == WHITE));
        }
    }

    #[test]
    fn absent_showers_is_white_at_position_six() {
        let spec = MosaicSpec::with_tile_px(4);
        let mut tiles: [Option<DynamicImage>; 7] = std::array::from_fn(|_| Some(solid(5, 5, 0)));
        tiles[Category::Showers.index()] = None;
        let m = compose_mosaic(&tiles, &spec).unwrap();
        // 1-indexed position 6 is zero-based cell 5.
        assert!(cell_pixels(&m, &spec, 5).iter().all(|p| *p == WHITE));
        assert!(cell_pixels(&m, &spec, 4).iter().all(|p| *p == [0, 0, 0]));
    }

    #[test]
    fn no_images_is_an_error() {
        let tiles: [Option<DynamicImage>; 7] = Default::default();
        assert!(matches!(
            compose_mosaic(&tiles, &MosaicSpec::with_tile_px(4)),
            Err(PreprocessError::NoImages(_))
        ));
        let rec = HouseholdRecord::new("f9", "X", None, 3.0).unwrap();
        match build_mosaic(&rec, &MosaicSpec::with_tile_px(4)) {
            Err(PreprocessError::NoImages(id)) => assert_eq!(id, "f9"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn rejects_other_grids() {
        let mut spec = MosaicSpec::with_tile_px(4);
        spec.rows = 2;
        assert!(spec.validate().is_err());
    }

    fn mean(pixels: impl Iterator<Item = [u8; 3]>) -> f64 {
        let (mut s, mut n) = (0.0, 0usize);
        for p in pixels {
            s += p.iter().map(|v| *v as f64).sum::<f64>();
            n += 3;
        }
        s / n as f64
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn geometry_and_white_fill(
            tile_px in 1u32..12,
            present in prop::collection::vec(any::<bool>(), 7),
            w in 1u32..40,
            h in 1u32..40,
            v in 0u8..=255,
        ) {
            prop_assume!(present.iter().any(|p| *p));
            let spec = MosaicSpec::with_tile_px(tile_px);
            let tiles: [Option<DynamicImage>; 7] =
                std::array::from_fn(|i| present[i].then(|| solid(w, h, v)));
            let m = compose_mosaic(&tiles, &spec).unwrap();
            prop_assert_eq!(m.dimensions(), (3 * tile_px, 3 * tile_px));
            for cell in 0..9 {
                if cell >= 7 || !present[cell] {
                    prop_assert!(cell_pixels(&m, &spec, cell).iter().all(|p| *p == WHITE));
                }
            }
        }

        #[test]
        fn single_tile_mosaic_is_at_least_as_bright_as_its_tile(
            which in 0usize..7,
            pixels in prop::collection::vec(any::<u8>(), 48),
        ) {
            let tile = RgbImage::from_fn(4, 4, |x, y| {
                let i = ((y * 4 + x) * 3) as usize;
                Rgb([pixels[i], pixels[i + 1], pixels[i + 2]])
            });
            let tile_mean = mean(tile.pixels().map(|p| p.0));
            let mut tiles: [Option<DynamicImage>; 7] = Default::default();
            tiles[which] = Some(DynamicImage::ImageRgb8(tile));
            let m = compose_mosaic(&tiles, &MosaicSpec::with_tile_px(4)).unwrap();
            prop_assert!(mean(m.pixels().map(|p| p.0)) >= tile_mean);
        }
    }
}
