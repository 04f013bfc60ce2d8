//! Class-map overlays with a trajectory drawn on top.

use std::path::Path;

use image::codecs::png::{CompressionType, FilterType, PngEncoder};
use image::{ImageEncoder, RgbImage};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::semantic_map::{SemanticMap, BUILDING, ROAD, TERRAIN, UNLABELLED, VEGETATION};

pub const TRAJECTORY_COLOR: [u8; 3] = [230, 30, 200];

/// Fixed color per cell value. Values without a class are drawn on a gray
/// ramp so stray labels stay visible.
pub fn palette() -> [[u8; 3]; 256] {
    let mut p = [[0u8; 3]; 256];
    for (i, c) in p.iter_mut().enumerate() {
        let g = 40 + (i as u8 / 2);
        *c = [g, g, g];
    }
    p[ROAD as usize] = [128, 128, 128];
    p[TERRAIN as usize] = [210, 190, 140];
    p[VEGETATION as usize] = [40, 140, 50];
    p[BUILDING as usize] = [170, 60, 50];
    p[UNLABELLED as usize] = [0, 0, 0];
    p
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RenderSummary {
    pub width: usize,
    pub height: usize,
    pub n_poses: usize,
    /// Trajectory vertices that fell outside the map.
    pub clipped: usize,
}

/// Paints the map and a polyline through `path_px` (continuous pixel
/// coordinates). Segments are rasterized with Bresenham and clipped to the
/// image.
pub fn render_overlay(map: &SemanticMap, path_px: &[[f64; 2]]) -> (RgbImage, RenderSummary) {
    let (w, h) = (map.width(), map.height());
    let pal = palette();
    let mut img = RgbImage::new(w as u32, h as u32);
    for (i, px) in img.pixels_mut().enumerate() {
        px.0 = pal[map.cells()[i] as usize];
    }
    let inside = |x: i64, y: i64| x >= 0 && y >= 0 && (x as usize) < w && (y as usize) < h;
    let pts: Vec<(i64, i64)> = path_px.iter().map(|p| (p[0].round() as i64, p[1].round() as i64)).collect();
    let clipped = pts.iter().filter(|&&(x, y)| !inside(x, y)).count();
    let mut plot = |x: i64, y: i64| {
        if inside(x, y) {
            img.put_pixel(x as u32, y as u32, image::Rgb(TRAJECTORY_COLOR));
        }
    };
    match pts.as_slice() {
        [] => {}
        [(x, y)] => plot(*x, *y),
        _ => {
            for seg in pts.windows(2) {
                bresenham(seg[0], seg[1], &mut plot);
            }
        }
    }
    (img, RenderSummary { width: w, height: h, n_poses: path_px.len(), clipped })
}

fn bresenham((mut x0, mut y0): (i64, i64), (x1, y1): (i64, i64), plot: &mut impl FnMut(i64, i64)) {
    let dx = (x1 - x0).abs();
    let dy = -(y1 - y0).abs();
    let (sx, sy) = (if x0 < x1 { 1 } else { -1 }, if y0 < y1 { 1 } else { -1 });
    let mut err = dx + dy;
    // long off-map segments are walked in full; trajectories are short
    loop {
        plot(x0, y0);
        if x0 == x1 && y0 == y1 {
            break;
        }
        let e2 = 2 * err;
        if e2 >= dy {
            err += dy;
            x0 += sx;
        }
        if e2 <= dx {
            err += dx;
            y0 += sy;
        }
    }
}

/// PNG with fixed compression and filter settings.
pub fn write_png(path: &Path, img: &RgbImage) -> Result<()> {
    let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = std::io::BufWriter::new(f);
    PngEncoder::new_with_quality(&mut out, CompressionType::Default, FilterType::Sub)
        .write_image(img.as_raw(), img.width(), img.height(), image::ExtendedColorType::Rgb8)
        .map_err(|e| Error::format(path.display().to_string(), e.to_string()))?;
    std::io::Write::flush(&mut out).map_err(|e| Error::io(path, e))
}
