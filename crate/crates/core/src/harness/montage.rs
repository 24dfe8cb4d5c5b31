//! Figure-style montage: one row per (condition, class), columns are the
//! input, the ground truth, and one heatmap per method.

use std::path::Path;

use image::RgbImage;

use crate::error::{Error, Result};
use crate::saliency::render::{grayscale_to_rgb, heatmap_to_rgb, mask_to_rgb};
use crate::saliency::Heatmap;

pub const TILE_PAD: usize = 2;

pub struct MontageRow {
    pub input: Vec<f32>,
    pub ground_truth: Vec<u8>,
    pub heatmaps: Vec<Heatmap>,
}

/// Deterministic PNG grid. All rows must share the raster shape and the
/// method count.
pub fn render_montage(
    rows: &[MontageRow],
    height: usize,
    width: usize,
    path: &Path,
) -> Result<()> {
    if rows.is_empty() {
        return Err(Error::Config("montage needs at least one row".into()));
    }
    let methods = rows[0].heatmaps.len();
    for row in rows {
        if row.input.len() != height * width
            || row.ground_truth.len() != height * width
            || row.heatmaps.len() != methods
        {
            return Err(Error::Shape("inconsistent montage row shapes".into()));
        }
    }
    let cols = 2 + methods;
    let total_w = TILE_PAD + cols * (width + TILE_PAD);
    let total_h = TILE_PAD + rows.len() * (height + TILE_PAD);
    let mut canvas = RgbImage::from_pixel(total_w as u32, total_h as u32, image::Rgb([255, 255, 255]));

    for (r, row) in rows.iter().enumerate() {
        let y0 = TILE_PAD + r * (height + TILE_PAD);
        let mut tiles: Vec<RgbImage> = Vec::with_capacity(cols);
        tiles.push(grayscale_to_rgb(&row.input, height, width));
        tiles.push(mask_to_rgb(&row.ground_truth, height, width));
        for map in &row.heatmaps {
            tiles.push(heatmap_to_rgb(&map.relevance, height, width));
        }
        for (c, tile) in tiles.iter().enumerate() {
            let x0 = TILE_PAD + c * (width + TILE_PAD);
            for (x, y, px) in tile.enumerate_pixels() {
                canvas.put_pixel(x0 as u32 + x, y0 as u32 + y, *px);
            }
        }
    }
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    canvas
        .save(path)
        .map_err(|e| Error::Image(format!("montage {}: {e}", path.display())))?;
    Ok(())
}

/// Expected pixel dimensions for a montage of `rows` x (2 + methods) tiles.
pub fn montage_dimensions(
    rows: usize,
    methods: usize,
    height: usize,
    width: usize,
) -> (usize, usize) {
    let cols = 2 + methods;
    (
        TILE_PAD + cols * (width + TILE_PAD),
        TILE_PAD + rows * (height + TILE_PAD),
    )
}
