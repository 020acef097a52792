//! Prediction-overlay export: the input image with the predicted mask
//! contour in red and the ground-truth contour in green.

use std::path::Path;

use image::{Rgb, RgbImage};
use mscanet_core::data::SegmentationSample;
use mscanet_core::metrics::Mask;
use mscanet_core::Result;

pub fn write_overlay(sample: &SegmentationSample, pred: &Mask, path: &Path) -> Result<()> {
    let (h, w) = sample.image.dim();
    let mut img = RgbImage::new(w as u32, h as u32);
    for y in 0..h {
        for x in 0..w {
            let v = (sample.image[[y, x]].clamp(0.0, 1.0) * 255.0).round() as u8;
            img.put_pixel(x as u32, y as u32, Rgb([v, v, v]));
        }
    }
    for (y, x) in contour(&sample.mask) {
        img.put_pixel(x as u32, y as u32, Rgb([0, 200, 0]));
    }
    for (y, x) in contour(pred) {
        img.put_pixel(x as u32, y as u32, Rgb([230, 30, 30]));
    }
    img.save(path)?;
    Ok(())
}

/// Positive pixels with at least one non-positive 4-neighbor.
fn contour(mask: &Mask) -> Vec<(usize, usize)> {
    let (h, w) = mask.dim();
    let mut out = Vec::new();
    for y in 0..h {
        for x in 0..w {
            if mask[[y, x]] == 0 {
                continue;
            }
            let edge = [(0i64, 1i64), (0, -1), (1, 0), (-1, 0)].iter().any(|(dy, dx)| {
                let (ny, nx) = (y as i64 + dy, x as i64 + dx);
                ny < 0
                    || nx < 0
                    || ny >= h as i64
                    || nx >= w as i64
                    || mask[[ny as usize, nx as usize]] == 0
            });
            if edge {
                out.push((y, x));
            }
        }
    }
    out
}
