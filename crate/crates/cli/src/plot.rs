//! Minimal raster plotting for the ROC curve image (no font dependency:
//! axes, grid and the curve only).

use std::path::Path;

use image::{Rgb, RgbImage};
use mscanet_core::metrics::RocPoint;
use mscanet_core::Result;

const W: u32 = 640;
const H: u32 = 480;
const MARGIN: u32 = 48;

pub fn render_roc(points: &[RocPoint], path: &Path) -> Result<()> {
    let mut img = RgbImage::from_pixel(W, H, Rgb([255, 255, 255]));
    let axis = Rgb([40, 40, 40]);
    let grid = Rgb([220, 220, 220]);
    let curve = Rgb([200, 30, 30]);

    let fa_max = points.iter().map(|p| p.fa).fold(0.0, f64::max).max(1e-12);
    let to_px = |fa: f64, pd: f64| -> (i64, i64) {
        let x = MARGIN as f64 + (fa / fa_max) * (W - 2 * MARGIN) as f64;
        let y = (H - MARGIN) as f64 - pd * (H - 2 * MARGIN) as f64;
        (x.round() as i64, y.round() as i64)
    };

    // grid at 0.25 steps in both normalized axes
    for i in 0..=4 {
        let t = i as f64 / 4.0;
        let (x, _) = to_px(t * fa_max, 0.0);
        let (_, y) = to_px(0.0, t);
        draw_line(&mut img, x, MARGIN as i64, x, (H - MARGIN) as i64, grid);
        draw_line(&mut img, MARGIN as i64, y, (W - MARGIN) as i64, y, grid);
    }
    // axes: pd on y, fa on x
    draw_line(
        &mut img,
        MARGIN as i64,
        MARGIN as i64,
        MARGIN as i64,
        (H - MARGIN) as i64,
        axis,
    );
    draw_line(
        &mut img,
        MARGIN as i64,
        (H - MARGIN) as i64,
        (W - MARGIN) as i64,
        (H - MARGIN) as i64,
        axis,
    );

    let mut prev: Option<(i64, i64)> = None;
    for p in points {
        let cur = to_px(p.fa, p.pd);
        if let Some(prev) = prev {
            draw_line(&mut img, prev.0, prev.1, cur.0, cur.1, curve);
        }
        draw_dot(&mut img, cur.0, cur.1, curve);
        prev = Some(cur);
    }
    img.save(path)?;
    Ok(())
}

fn draw_dot(img: &mut RgbImage, x: i64, y: i64, color: Rgb<u8>) {
    for dy in -1..=1 {
        for dx in -1..=1 {
            put(img, x + dx, y + dy, color);
        }
    }
}

fn put(img: &mut RgbImage, x: i64, y: i64, color: Rgb<u8>) {
    if x >= 0 && y >= 0 && (x as u32) < img.width() && (y as u32) < img.height() {
        img.put_pixel(x as u32, y as u32, color);
    }
}

/// Bresenham line.
fn draw_line(img: &mut RgbImage, x0: i64, y0: i64, x1: i64, y1: i64, color: Rgb<u8>) {
    let (mut x, mut y) = (x0, y0);
    let dx = (x1 - x0).abs();
    let dy = -(y1 - y0).abs();
    let sx = if x0 < x1 { 1 } else { -1 };
    let sy = if y0 < y1 { 1 } else { -1 };
    let mut err = dx + dy;
    loop {
        put(img, x, y, color);
        if x == x1 && y == y1 {
            break;
        }
        let e2 = 2 * err;
        if e2 >= dy {
            err += dy;
            x += sx;
        }
        if e2 <= dx {
            err += dx;
            y += sy;
        }
    }
}
