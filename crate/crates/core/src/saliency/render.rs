//! Raster rendering: symmetric diverging colormap for heatmaps, plain
//! grayscale for inputs and masks.

use image::{Rgb, RgbImage};

/// Blue-white-red, centered at zero and scaled by max |v|. A constant-zero
/// map renders white.
pub fn heatmap_to_rgb(values: &[f32], height: usize, width: usize) -> RgbImage {
    let m = values.iter().fold(0.0f32, |m, v| m.max(v.abs()));
    RgbImage::from_fn(width as u32, height as u32, |x, y| {
        let v = values[y as usize * width + x as usize];
        if m == 0.0 {
            return Rgb([255, 255, 255]);
        }
        let t = (v / m).clamp(-1.0, 1.0);
        if t >= 0.0 {
            let fade = ((1.0 - t) * 255.0).round() as u8;
            Rgb([255, fade, fade])
        } else {
            let fade = ((1.0 + t) * 255.0).round() as u8;
            Rgb([fade, fade, 255])
        }
    })
}

pub fn grayscale_to_rgb(pixels: &[f32], height: usize, width: usize) -> RgbImage {
    RgbImage::from_fn(width as u32, height as u32, |x, y| {
        let v = (pixels[y as usize * width + x as usize].clamp(0.0, 1.0) * 255.0).round() as u8;
        Rgb([v, v, v])
    })
}

pub fn mask_to_rgb(bits: &[u8], height: usize, width: usize) -> RgbImage {
    RgbImage::from_fn(width as u32, height as u32, |x, y| {
        if bits[y as usize * width + x as usize] == 1 {
            Rgb([255, 255, 255])
        } else {
            Rgb([0, 0, 0])
        }
    })
}
