//! PNG helpers for frames and masks.
//!
//! Masks on disk are single-channel 8-bit PNGs with 0 for background and
//! 255 for foreground; any value >= 128 reads as foreground.

use std::path::Path;

use image::{GrayImage, ImageBuffer, Luma, Rgb, RgbImage};

use crate::error::{Error, Result};
use crate::model::{BinaryMask, Frame};

pub fn read_frame_png(path: &Path) -> Result<Frame> {
    let img = image::open(path)
        .map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })?
        .to_rgb8();
    let (w, h) = img.dimensions();
    Frame::new(w as usize, h as usize, img.into_raw())
}

pub fn write_frame_png(path: &Path, frame: &Frame) -> Result<()> {
    let img: RgbImage = ImageBuffer::<Rgb<u8>, _>::from_raw(
        frame.width() as u32,
        frame.height() as u32,
        frame.data().to_vec(),
    )
    .expect("frame buffer length matches dimensions");
    img.save(path).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })
}

pub fn read_mask_png(path: &Path) -> Result<BinaryMask> {
    let img = image::open(path)
        .map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })?
        .to_luma8();
    let (w, h) = img.dimensions();
    let labels = img.into_raw().into_iter().map(|v| u8::from(v >= 128)).collect();
    BinaryMask::new(w as usize, h as usize, labels)
}

pub fn write_mask_png(path: &Path, mask: &BinaryMask) -> Result<()> {
    let img: GrayImage = ImageBuffer::<Luma<u8>, _>::from_raw(
        mask.width() as u32,
        mask.height() as u32,
        mask.labels().iter().map(|&l| l * 255).collect(),
    )
    .expect("mask buffer length matches dimensions");
    img.save(path).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mask_png_round_trip_uses_0_and_255() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.png");
        let mask = BinaryMask::from_fn(7, 5, |x, y| (x + y) % 3 == 0);
        write_mask_png(&path, &mask).unwrap();
        let raw = image::open(&path).unwrap();
        assert!(matches!(raw, image::DynamicImage::ImageLuma8(_)));
        let raw = raw.to_luma8().into_raw();
        assert!(raw.iter().all(|&v| v == 0 || v == 255));
        assert_eq!(read_mask_png(&path).unwrap(), mask);
    }

    #[test]
    fn frame_png_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f.png");
        let frame = Frame::from_fn(4, 3, |x, y| [x as u8 * 40, y as u8 * 70, 9]);
        write_frame_png(&path, &frame).unwrap();
        assert_eq!(read_frame_png(&path).unwrap(), frame);
    }
}
