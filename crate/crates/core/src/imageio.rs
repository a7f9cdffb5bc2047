//! PNG encoding for RGB frames, masks and debug previews.

use std::io::Cursor;

use image::{GrayImage, ImageFormat, RgbImage};

use crate::camera::{DepthMap, DisparityImage};
use crate::scene::{LabelImage, Mask};

pub fn encode_rgb_png(img: &RgbImage) -> Result<Vec<u8>, image::ImageError> {
    let mut out = Cursor::new(Vec::new());
    img.write_to(&mut out, ImageFormat::Png)?;
    Ok(out.into_inner())
}

pub fn decode_rgb_png(bytes: &[u8]) -> Result<RgbImage, image::ImageError> {
    Ok(image::load_from_memory_with_format(bytes, ImageFormat::Png)?.to_rgb8())
}

/// Mask as an 8-bit image: 255 where set.
pub fn encode_mask_png(mask: &Mask) -> Result<Vec<u8>, image::ImageError> {
    let g = GrayImage::from_raw(mask.width, mask.height, mask.bits.iter().map(|&b| if b { 255 } else { 0 }).collect())
        .expect("mask buffer matches its dimensions");
    let mut out = Cursor::new(Vec::new());
    g.write_to(&mut out, ImageFormat::Png)?;
    Ok(out.into_inner())
}

pub fn decode_mask_png(bytes: &[u8]) -> Result<Mask, image::ImageError> {
    let g = image::load_from_memory_with_format(bytes, ImageFormat::Png)?.to_luma8();
    Ok(Mask { width: g.width(), height: g.height(), bits: g.as_raw().iter().map(|&p| p >= 128).collect() })
}

fn gray_png(width: u32, height: u32, px: Vec<u8>) -> Result<Vec<u8>, image::ImageError> {
    let g = GrayImage::from_raw(width, height, px).expect("buffer matches dimensions");
    let mut out = Cursor::new(Vec::new());
    g.write_to(&mut out, ImageFormat::Png)?;
    Ok(out.into_inner())
}

/// Depth preview, near = white, far = black.
pub fn depth_preview_png(depth: &DepthMap) -> Result<Vec<u8>, image::ImageError> {
    let span = (depth.far - depth.near).max(f32::EPSILON);
    let px = depth.z.iter().map(|&z| (255.0 * (1.0 - (z - depth.near) / span)).round().clamp(0.0, 255.0) as u8).collect();
    gray_png(depth.width, depth.height, px)
}

pub fn disparity_png(d: &DisparityImage) -> Result<Vec<u8>, image::ImageError> {
    let px = d.d.iter().map(|&x| (x * 255.0).round().clamp(0.0, 255.0) as u8).collect();
    gray_png(d.width, d.height, px)
}

/// Labels spread over the gray range so neighbouring ids are distinguishable.
pub fn label_preview_png(labels: &LabelImage) -> Result<Vec<u8>, image::ImageError> {
    let px = labels.labels.iter().map(|&l| l.wrapping_mul(61)).collect();
    gray_png(labels.width, labels.height, px)
}
