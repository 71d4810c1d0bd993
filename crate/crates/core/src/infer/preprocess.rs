use std::path::Path;

use image::imageops::{self, FilterType};
use image::RgbImage;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor};

/// Coordinate mapping between a source image and the letterboxed network
/// input: `network = source · scale`, content anchored at the top-left, zero
/// padding on the bottom and right.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Letterbox {
    pub source_width: usize,
    pub source_height: usize,
    pub target_width: usize,
    pub target_height: usize,
    pub scale: f64,
    /// Width and height of the resized content inside the target.
    pub content_width: usize,
    pub content_height: usize,
    pub pad_bottom: usize,
    pub pad_right: usize,
}

impl Letterbox {
    pub fn new(source_width: usize, source_height: usize, target_width: usize, target_height: usize) -> Result<Self> {
        if source_width == 0 || source_height == 0 {
            return Err(Error::InvalidInput("empty image".into()));
        }
        if target_width == 0 || target_height == 0 {
            return Err(Error::InvalidInput("empty letterbox target".into()));
        }
        let scale = (target_width as f64 / source_width as f64).min(target_height as f64 / source_height as f64);
        let fit = |len: usize, target: usize| ((len as f64 * scale).round() as usize).clamp(1, target);
        let content_width = fit(source_width, target_width);
        let content_height = fit(source_height, target_height);
        Ok(Letterbox {
            source_width,
            source_height,
            target_width,
            target_height,
            scale,
            content_width,
            content_height,
            pad_bottom: target_height - content_height,
            pad_right: target_width - content_width,
        })
    }

    pub fn is_identity(&self) -> bool {
        self.scale == 1.0 && self.pad_bottom == 0 && self.pad_right == 0
    }

    /// Network coordinates to source-image coordinates.
    pub fn to_source(&self, x: f64, y: f64) -> (f64, f64) {
        (x / self.scale, y / self.scale)
    }

    pub fn to_network(&self, x: f64, y: f64) -> (f64, f64) {
        (x * self.scale, y * self.scale)
    }
}

/// Reads an 8-bit RGB image; binary PPM (P6) and PNG are supported.
pub fn load_image(path: impl AsRef<Path>) -> Result<RgbImage> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let format = image::guess_format(&bytes)?;
    Ok(image::load_from_memory_with_format(&bytes, format)?.to_rgb8())
}

/// Letterboxes `image` to `target_height × target_width` and scales pixel
/// values to `[0, 1]`, producing a `1×3×H×W` tensor.
pub fn preprocess(image: &RgbImage, target_height: usize, target_width: usize) -> Result<(Tensor<f32>, Letterbox)> {
    let lb = Letterbox::new(image.width() as usize, image.height() as usize, target_width, target_height)?;
    let resized;
    let content = if lb.content_width == lb.source_width && lb.content_height == lb.source_height {
        image
    } else {
        resized = imageops::resize(image, lb.content_width as u32, lb.content_height as u32, FilterType::Triangle);
        &resized
    };
    let plane = target_height * target_width;
    let mut data = vec![0.0f32; 3 * plane];
    for (x, y, px) in content.enumerate_pixels() {
        let offset = y as usize * target_width + x as usize;
        for c in 0..3 {
            data[c * plane + offset] = px[c] as f32 / 255.0;
        }
    }
    Ok((Tensor::new(Shape::new(1, 3, target_height, target_width), data)?, lb))
}
