//! PNG round-trips for CHW f64 images in [0,1].

use std::path::Path;

use image::{ImageBuffer, Rgb};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ImageIoError {
    #[error("image error on {path}: {message}")]
    Image { path: String, message: String },
    #[error("unexpected image shape: {0}")]
    Shape(String),
}

/// Quantize a [0,1] channel value to 8 bits.
pub fn to_u8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

pub fn save_png(path: &Path, rgb: &[f64], width: usize, height: usize) -> Result<(), ImageIoError> {
    let hw = width * height;
    if rgb.len() != 3 * hw {
        return Err(ImageIoError::Shape(format!(
            "expected {} values for {}x{}, got {}",
            3 * hw,
            width,
            height,
            rgb.len()
        )));
    }
    let mut img = ImageBuffer::<Rgb<u8>, Vec<u8>>::new(width as u32, height as u32);
    for y in 0..height {
        for x in 0..width {
            let i = y * width + x;
            img.put_pixel(
                x as u32,
                y as u32,
                Rgb([to_u8(rgb[i]), to_u8(rgb[hw + i]), to_u8(rgb[2 * hw + i])]),
            );
        }
    }
    img.save(path).map_err(|e| ImageIoError::Image {
        path: path.display().to_string(),
        message: e.to_string(),
    })
}

/// Load a PNG as CHW f64 in [0,1]. Returns (data, width, height).
pub fn load_png(path: &Path) -> Result<(Vec<f64>, usize, usize), ImageIoError> {
    let img = image::open(path)
        .map_err(|e| ImageIoError::Image {
            path: path.display().to_string(),
            message: e.to_string(),
        })?
        .to_rgb8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let hw = w * h;
    let mut out = vec![0.0f64; 3 * hw];
    for y in 0..h {
        for x in 0..w {
            let p = img.get_pixel(x as u32, y as u32);
            let i = y * w + x;
            out[i] = p[0] as f64 / 255.0;
            out[hw + i] = p[1] as f64 / 255.0;
            out[2 * hw + i] = p[2] as f64 / 255.0;
        }
    }
    Ok((out, w, h))
}
