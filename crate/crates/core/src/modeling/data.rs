//! In-memory training data: images resized to the model input size and
//! stored as CHW bytes.

use image::imageops::FilterType;
use image::DynamicImage;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::metrics::Task;
use crate::preprocess::ImageSample;

use super::nn::Feature;
use super::ModelError;

const MEAN: [f32; 3] = [0.485, 0.456, 0.406];
const STD: [f32; 3] = [0.229, 0.224, 0.225];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Target {
    Value(f64),
    Class(u8),
}

impl Target {
    pub fn value(&self) -> Option<f64> {
        match self {
            Target::Value(v) => Some(*v),
            Target::Class(_) => None,
        }
    }

    pub fn class(&self) -> Option<u8> {
        match self {
            Target::Class(c) => Some(*c),
            Target::Value(_) => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    /// `3 × px × px` bytes, channel-major.
    pub pixels: Vec<u8>,
    pub target: Target,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TensorDataset {
    pub input_px: u32,
    pub examples: Vec<Example>,
}

/// Squash-resizes to `px × px` and lays the RGB bytes out channel-major.
pub fn image_to_pixels(img: &DynamicImage, px: u32) -> Vec<u8> {
    let rgb = if img.width() == px && img.height() == px {
        img.to_rgb8()
    } else {
        img.resize_exact(px, px, FilterType::Triangle).to_rgb8()
    };
    let n = (px * px) as usize;
    let mut out = vec![0u8; 3 * n];
    for (i, p) in rgb.pixels().enumerate() {
        for c in 0..3 {
            out[c * n + i] = p.0[c];
        }
    }
    out
}

/// Scales bytes to `[0, 1]` and standardises each channel.
pub fn normalize(pixels: &[u8], px: u32) -> Feature {
    let n = (px * px) as usize;
    let data = pixels
        .iter()
        .enumerate()
        .map(|(i, v)| {
            let c = i / n;
            (*v as f32 / 255.0 - MEAN[c]) / STD[c]
        })
        .collect();
    Feature::new(3, px as usize, px as usize, data)
}

/// Random horizontal flip plus a random crop from an edge-padded copy.
pub fn augment(pixels: &[u8], px: u32, rng: &mut impl Rng) -> Vec<u8> {
    let px = px as usize;
    let pad = (px / 8) as i64;
    let flip = rng.random_bool(0.5);
    let dx = rng.random_range(-pad..=pad);
    let dy = rng.random_range(-pad..=pad);
    let n = px * px;
    let clamp = |v: i64| v.clamp(0, px as i64 - 1) as usize;
    let mut out = vec![0u8; pixels.len()];
    for c in 0..3 {
        for y in 0..px {
            let sy = clamp(y as i64 + dy);
            for x in 0..px {
                let sx = clamp(x as i64 + dx);
                let sx = if flip { px - 1 - sx } else { sx };
                out[c * n + y * px + x] = pixels[c * n + sy * px + sx];
            }
        }
    }
    out
}

impl TensorDataset {
    pub fn from_images(images: &[DynamicImage], targets: &[Target], input_px: u32) -> Result<Self, ModelError> {
        if images.len() != targets.len() {
            return Err(ModelError::Data(format!(
                "{} images but {} targets",
                images.len(),
                targets.len()
            )));
        }
        Ok(Self {
            input_px,
            examples: images
                .iter()
                .zip(targets)
                .map(|(img, t)| Example {
                    pixels: image_to_pixels(img, input_px),
                    target: *t,
                })
                .collect(),
        })
    }

    /// Loads and resizes the images behind `samples`.
    pub fn from_samples(samples: &[ImageSample], task: Task, input_px: u32) -> Result<Self, ModelError> {
        let mut examples = Vec::with_capacity(samples.len());
        for s in samples {
            let img =
                image::open(&s.path).map_err(|e| ModelError::Data(format!("cannot read {}: {e}", s.path.display())))?;
            let target = match task {
                Task::Regression => Target::Value(s.log_consumption),
                Task::Classification => Target::Class(
                    s.poverty_label
                        .ok_or_else(|| ModelError::Data(format!("sample {} has no label", s.family_id)))?,
                ),
            };
            examples.push(Example {
                pixels: image_to_pixels(&img, input_px),
                target,
            });
        }
        Ok(Self { input_px, examples })
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn values(&self) -> Vec<f64> {
        self.examples.iter().filter_map(|e| e.target.value()).collect()
    }

    pub fn classes(&self) -> Vec<u8> {
        self.examples.iter().filter_map(|e| e.target.class()).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use image::{Rgb, RgbImage};
    use rand::SeedableRng;

    #[test]
    fn pixels_are_channel_major() {
        let img = DynamicImage::ImageRgb8(RgbImage::from_fn(2, 2, |x, y| Rgb([x as u8, y as u8, 9])));
        let p = image_to_pixels(&img, 2);
        assert_eq!(p, vec![0, 1, 0, 1, 0, 0, 1, 1, 9, 9, 9, 9]);
        let f = normalize(&p, 2);
        assert!((f.data[0] - (0.0 - MEAN[0]) / STD[0]).abs() < 1e-6);
    }

    #[test]
    fn augmentation_preserves_constant_images() {
        let pixels = vec![77u8; 3 * 16 * 16];
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        for _ in 0..10 {
            assert_eq!(augment(&pixels, 16, &mut rng), pixels);
        }
    }

    #[test]
    fn mismatched_targets() {
        let img = DynamicImage::ImageRgb8(RgbImage::new(4, 4));
        assert!(TensorDataset::from_images(&[img], &[], 4).is_err());
    }
}
