//! Ray-cast renderer for box scenes: shaded RGB, normalized depth and a
//! per-pixel body label.

use std::io::BufWriter;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::camera::{CameraPose, DepthMap, Intrinsics};
use crate::error::{Error, Result};
use crate::geom::Vec3;
use crate::raster::ImageBuffer;
use crate::scene::{Scene, SurfaceBody};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PartId {
    Background,
    Static,
    Part,
}

#[derive(Debug, Clone)]
pub struct RenderOutput {
    pub rgb: ImageBuffer,
    pub gt_depth: DepthMap,
    /// Outward surface normal per pixel; zero on background.
    pub gt_normal: Vec<Vec3>,
    pub part_id: Vec<PartId>,
}

const AMBIENT: f64 = 0.35;
const DIFFUSE: f64 = 0.65;
const BACKGROUND: [f64; 3] = [0.0, 0.0, 0.0];

fn light_dir() -> Vec3 {
    Vec3::new(0.6, 0.35, 0.72).normalize()
}

pub fn render(scene: &Scene, pose: &CameraPose, intr: &Intrinsics) -> RenderOutput {
    let bodies: Vec<_> = scene.bodies().collect();
    let mut rgb = ImageBuffer::new(intr.width, intr.height);
    let mut depth = DepthMap::invalid(intr.width, intr.height);
    let mut part_id = vec![PartId::Background; intr.num_pixels()];
    let mut gt_normal = vec![Vec3::zeros(); intr.num_pixels()];
    let fwd = pose.forward();
    let light = light_dir();
    for row in 0..intr.height {
        for col in 0..intr.width {
            let dir = pose.ray_dir(row as f64 + 0.5, col as f64 + 0.5, intr);
            let mut best: Option<(f64, Vec3, SurfaceBody, usize)> = None;
            for (k, (body, b)) in bodies.iter().enumerate() {
                if let Some(hit) = b.intersect(&pose.position, &dir, 1e-9) {
                    if best.as_ref().is_none_or(|(t, ..)| hit.t < *t) {
                        best = Some((hit.t, hit.normal, *body, k));
                    }
                }
            }
            let Some((t, normal, body, k)) = best else {
                rgb.set_pixel(row, col, BACKGROUND);
                continue;
            };
            let z = t * dir.dot(&fwd);
            let d = z / intr.far_plane;
            if d > 1.0 {
                rgb.set_pixel(row, col, BACKGROUND);
                continue;
            }
            depth.set(row, col, d);
            let point = pose.position + dir * t;
            let albedo = match body {
                SurfaceBody::Static(_) => scene.static_boxes[k].albedo,
                SurfaceBody::Part if scene.part.on_handle(&point) => scene.part.handle_albedo,
                SurfaceBody::Part => scene.part.albedo,
            };
            let shade = AMBIENT + DIFFUSE * normal.dot(&light).max(0.0);
            rgb.set_pixel(
                row,
                col,
                [
                    (albedo[0] * shade).clamp(0.0, 1.0),
                    (albedo[1] * shade).clamp(0.0, 1.0),
                    (albedo[2] * shade).clamp(0.0, 1.0),
                ],
            );
            gt_normal[row * intr.width + col] = normal;
            part_id[row * intr.width + col] = match body {
                SurfaceBody::Static(_) => PartId::Static,
                SurfaceBody::Part => PartId::Part,
            };
        }
    }
    RenderOutput {
        rgb,
        gt_depth: depth,
        gt_normal,
        part_id,
    }
}

fn write_png(path: &Path, width: usize, height: usize, color: png::ColorType, data: &[u8]) -> Result<()> {
    let file = std::fs::File::create(path)?;
    let mut enc = png::Encoder::new(BufWriter::new(file), width as u32, height as u32);
    enc.set_color(color);
    enc.set_depth(png::BitDepth::Eight);
    let mut writer = enc.write_header().map_err(|e| Error::Png(e.to_string()))?;
    writer.write_image_data(data).map_err(|e| Error::Png(e.to_string()))?;
    writer.finish().map_err(|e| Error::Png(e.to_string()))?;
    Ok(())
}

fn to_byte(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

pub fn save_rgb_png(img: &ImageBuffer, path: &Path) -> Result<()> {
    let bytes: Vec<u8> = img.data.iter().map(|&v| to_byte(v)).collect();
    write_png(path, img.width, img.height, png::ColorType::Rgb, &bytes)
}

/// Grayscale depth image; invalid pixels are black, near is bright.
pub fn save_depth_png(depth: &DepthMap, path: &Path) -> Result<()> {
    let bytes: Vec<u8> = depth
        .values
        .iter()
        .zip(&depth.valid)
        .map(|(&v, &ok)| if ok { to_byte(1.0 - v) } else { 0 })
        .collect();
    write_png(path, depth.width, depth.height, png::ColorType::Grayscale, &bytes)
}

/// Blue-to-red heatmap of values in `[0, 1]`, optionally blended over an image.
pub fn save_heatmap_png(
    values: &[f64],
    width: usize,
    height: usize,
    under: Option<&ImageBuffer>,
    path: &Path,
) -> Result<()> {
    if values.len() != width * height {
        return Err(Error::Shape(format!(
            "heatmap of {} values for {width}x{height}",
            values.len()
        )));
    }
    let mut bytes = Vec::with_capacity(values.len() * 3);
    for (i, &v) in values.iter().enumerate() {
        let v = v.clamp(0.0, 1.0);
        let heat = [v, 1.0 - (2.0 * v - 1.0).abs(), 1.0 - v];
        let px = match under {
            Some(img) => {
                let base = img.pixel(i / width, i % width);
                [
                    0.5 * base[0] + 0.5 * heat[0],
                    0.5 * base[1] + 0.5 * heat[1],
                    0.5 * base[2] + 0.5 * heat[2],
                ]
            }
            None => heat,
        };
        bytes.extend(px.iter().map(|&c| to_byte(c)));
    }
    write_png(path, width, height, png::ColorType::Rgb, &bytes)
}
