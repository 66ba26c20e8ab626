//! 8-bit PNG previews.

use std::path::Path;

use hlnet::imaging::tonemap_mu;
use hlnet::FeatureMap;
use image::{GrayImage, RgbImage};

use crate::error::CliResult;

/// Quantizes `[0, 1]` to 8 bits with round-half-to-even.
pub fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round_ties_even() as u8
}

/// Tonemapped preview of batch item 0. Four channels are read as packed
/// RGGB and shown as RGB with averaged greens; three channels as RGB;
/// anything else shows channel 0 in gray.
pub fn save_tonemapped(map: &FeatureMap<f64>, mu: f64, path: &Path) -> CliResult<()> {
    let t = tonemap_mu(&map.mapv(|v| v.clamp(0.0, 1.0)), mu)?;
    let (_, c, h, w) = t.dim();
    let px = |ch: usize, y: usize, x: usize| t[[0, ch, y, x]];
    match c {
        3 | 4 => {
            let img = RgbImage::from_fn(w as u32, h as u32, |x, y| {
                let (x, y) = (x as usize, y as usize);
                let (r, g, b) = if c == 4 {
                    (px(0, y, x), 0.5 * (px(1, y, x) + px(2, y, x)), px(3, y, x))
                } else {
                    (px(0, y, x), px(1, y, x), px(2, y, x))
                };
                image::Rgb([quantize(r), quantize(g), quantize(b)])
            });
            img.save(path)?;
        }
        _ => {
            GrayImage::from_fn(w as u32, h as u32, |x, y| image::Luma([quantize(px(0, y as usize, x as usize))]))
                .save(path)?;
        }
    }
    Ok(())
}

/// Channels of batch item 0 tiled left to right, each mapped by `f`.
fn save_tiled(map: &FeatureMap<f64>, path: &Path, f: impl Fn(f64) -> f64) -> CliResult<()> {
    let (_, c, h, w) = map.dim();
    GrayImage::from_fn((w * c) as u32, h as u32, |x, y| {
        let (ch, xx) = (x as usize / w, x as usize % w);
        image::Luma([quantize(f(map[[0, ch, y as usize, xx]]))])
    })
    .save(path)?;
    Ok(())
}

/// Signed detail map centered at mid-gray: zero maps to 128 and the
/// largest magnitude to 0 or 255.
pub fn save_signed(map: &FeatureMap<f64>, path: &Path) -> CliResult<()> {
    let peak = map.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let scale = if peak > 0.0 { 0.5 / peak } else { 0.0 };
    save_tiled(map, path, |v| 0.5 + v * scale)
}

/// Min-max normalized map; a constant map is mid-gray.
pub fn save_normalized(map: &FeatureMap<f64>, path: &Path) -> CliResult<()> {
    let lo = map.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = map.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if hi > lo {
        save_tiled(map, path, |v| (v - lo) / (hi - lo))
    } else {
        save_tiled(map, path, |_| 0.5)
    }
}
