//! Whole-trap mosaic with merged masks tinted by class.

use std::path::Path;

use image::{GrayImage, Rgb, RgbImage};
use ovitrap_core::raster::{rasterize, Grid};
use ovitrap_core::{EggClass, GlobalInstance, ScanPlan};

use crate::error::{CliError, CliResult};

pub const HATCHED_RGB: [u8; 3] = [230, 40, 40];
pub const FULL_RGB: [u8; 3] = [40, 110, 240];
const TINT_ALPHA: f64 = 0.55;

/// Builds the mosaic at `mm_per_px` from the tile PNGs in `tile_dir`, later
/// poses painting over earlier ones, then tints every merged mask.
pub fn render(
    plan: &ScanPlan,
    tile_dir: &Path,
    tile_file: impl Fn(usize) -> String,
    merged: &[GlobalInstance],
    mm_per_px: f64,
) -> CliResult<RgbImage> {
    let width = (plan.trap.length_mm / mm_per_px).ceil() as u32;
    let height = (plan.trap.width_mm / mm_per_px).ceil() as u32;
    let mut gray = GrayImage::from_pixel(width, height, image::Luma([0]));
    for pose in &plan.poses {
        let path = tile_dir.join(tile_file(pose.id));
        let tile = image::open(&path)
            .map_err(|e| match e {
                image::ImageError::IoError(io) if io.kind() == std::io::ErrorKind::NotFound => {
                    CliError::Missing(path.clone())
                }
                other => CliError::schema(&path, other),
            })?
            .into_luma8();
        let rect = pose.rect(&plan.tile);
        let (pu, pv) = (plan.tile.pitch_major(), plan.tile.pitch_minor());
        let i0 = (rect.min[0] / mm_per_px - 0.5).ceil().max(0.0) as u32;
        let j0 = (rect.min[1] / mm_per_px - 0.5).ceil().max(0.0) as u32;
        for j in j0..height {
            let y = (j as f64 + 0.5) * mm_per_px;
            if y > rect.max[1] {
                break;
            }
            let v = (((y - pose.origin_mm[1]) / pv) as u32).min(tile.height() - 1);
            for i in i0..width {
                let x = (i as f64 + 0.5) * mm_per_px;
                if x > rect.max[0] {
                    break;
                }
                let u = (((x - pose.origin_mm[0]) / pu) as u32).min(tile.width() - 1);
                gray.put_pixel(i, j, *tile.get_pixel(u, v));
            }
        }
    }

    let mut rgb = RgbImage::from_fn(width, height, |i, j| {
        let g = gray.get_pixel(i, j).0[0];
        Rgb([g, g, g])
    });
    for inst in merged {
        let Some(bb) = inst.bbox() else { continue };
        let grid = Grid::aligned(&bb, mm_per_px);
        let mask = rasterize(&grid, &inst.polygons);
        let tint = match inst.class {
            EggClass::Hatched => HATCHED_RGB,
            EggClass::Full => FULL_RGB,
        };
        let (oi, oj) = ((grid.origin[0] / mm_per_px).round() as i64, (grid.origin[1] / mm_per_px).round() as i64);
        for b in 0..grid.height {
            for a in 0..grid.width {
                if !mask.get(a, b) {
                    continue;
                }
                let (i, j) = (oi + a as i64, oj + b as i64);
                if i < 0 || j < 0 || i >= width as i64 || j >= height as i64 {
                    continue;
                }
                let px = rgb.get_pixel_mut(i as u32, j as u32);
                for (ch, t) in px.0.iter_mut().zip(tint) {
                    *ch = ((1.0 - TINT_ALPHA) * *ch as f64 + TINT_ALPHA * t as f64).round() as u8;
                }
            }
        }
    }
    Ok(rgb)
}

pub fn encode_png(img: &RgbImage) -> CliResult<Vec<u8>> {
    use image::ImageEncoder;
    let mut buf = Vec::new();
    image::codecs::png::PngEncoder::new(&mut buf)
        .write_image(img.as_raw(), img.width(), img.height(), image::ExtendedColorType::Rgb8)
        .map_err(|e| CliError::Invariant(format!("overlay encoding failed: {e}")))?;
    Ok(buf)
}
