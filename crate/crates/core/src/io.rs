//! PNG input and output for images, masks and textures.
//!
//! Images are stored as 8-bit RGB and read back as values in `[0, 1]`.
//! A texture's validity lives in a parallel single-channel file next to
//! its pixels: `face.png` pairs with `face.valid.png`.

use std::path::{Path, PathBuf};

use image::{GrayImage, Luma, Rgb};

use crate::error::{Error, Result};
use crate::image::{Mask, RgbImage, TextureMap};

fn image_err(path: &Path, source: image::ImageError) -> Error {
    match source {
        image::ImageError::IoError(e) if e.kind() == std::io::ErrorKind::NotFound => {
            Error::MissingArtifact(path.to_path_buf())
        }
        source => Error::Image {
            path: path.to_path_buf(),
            source,
        },
    }
}

fn to_byte(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

pub fn encode_rgb(img: &RgbImage) -> image::RgbImage {
    let mut out = image::RgbImage::new(img.width() as u32, img.height() as u32);
    for (x, y, px) in out.enumerate_pixels_mut() {
        let c = img.get(x as usize, y as usize);
        *px = Rgb(c.map(to_byte));
    }
    out
}

pub fn decode_rgb(img: &image::RgbImage) -> RgbImage {
    RgbImage::from_fn(img.width() as usize, img.height() as usize, |x, y| {
        img.get_pixel(x as u32, y as u32).0.map(|b| b as f64 / 255.0)
    })
}

pub fn load_rgb(path: &Path) -> Result<RgbImage> {
    let img = image::open(path).map_err(|e| image_err(path, e))?;
    Ok(decode_rgb(&img.to_rgb8()))
}

pub fn save_rgb(img: &RgbImage, path: &Path) -> Result<()> {
    encode_rgb(img).save(path).map_err(|e| image_err(path, e))
}

/// Pixels at or above half intensity count as set.
pub fn load_mask(path: &Path) -> Result<Mask> {
    let img = image::open(path).map_err(|e| image_err(path, e))?.to_luma8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    Ok(Mask::from_fn(w, h, |x, y| img.get_pixel(x as u32, y as u32).0[0] >= 128))
}

pub fn save_mask(mask: &Mask, path: &Path) -> Result<()> {
    let mut out = GrayImage::new(mask.width() as u32, mask.height() as u32);
    for (x, y, px) in out.enumerate_pixels_mut() {
        *px = Luma([if mask.get(x as usize, y as usize) { 255 } else { 0 }]);
    }
    out.save(path).map_err(|e| image_err(path, e))
}

pub fn validity_path(texture_path: &Path) -> PathBuf {
    texture_path.with_extension("valid.png")
}

/// Reads a texture and its validity file; a texture without one is complete.
pub fn load_texture(path: &Path) -> Result<TextureMap> {
    let pixels = load_rgb(path)?;
    let vpath = validity_path(path);
    if vpath.exists() {
        TextureMap::new(pixels, load_mask(&vpath)?)
    } else {
        TextureMap::complete(pixels)
    }
}

pub fn save_texture(texture: &TextureMap, path: &Path) -> Result<()> {
    save_rgb(texture.pixels(), path)?;
    save_mask(texture.validity(), &validity_path(path))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rgb_round_trip_is_within_quantization() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.png");
        let img = RgbImage::from_fn(7, 5, |x, y| [x as f64 / 6.0, y as f64 / 4.0, 0.3]);
        save_rgb(&img, &p).unwrap();
        let back = load_rgb(&p).unwrap();
        assert_eq!((back.width(), back.height()), (7, 5));
        assert!(back.max_abs_diff(&img) <= 0.5 / 255.0 + 1e-12);
    }

    #[test]
    fn out_of_range_values_are_clamped() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.png");
        save_rgb(&RgbImage::filled(2, 2, [-1.0, 2.0, 0.5]), &p).unwrap();
        let back = load_rgb(&p).unwrap();
        assert_eq!(back.get(1, 1)[..2], [0.0, 1.0]);
    }

    #[test]
    fn texture_validity_travels_alongside() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("tex.png");
        let mask = Mask::from_fn(8, 8, |x, _| x < 3);
        let tex = TextureMap::new(RgbImage::filled(8, 8, [0.2, 0.4, 0.6]), mask.clone()).unwrap();
        save_texture(&tex, &p).unwrap();
        assert!(dir.path().join("tex.valid.png").exists());
        let back = load_texture(&p).unwrap();
        assert_eq!(back.validity(), &mask);
        std::fs::remove_file(dir.path().join("tex.valid.png")).unwrap();
        assert_eq!(load_texture(&p).unwrap().validity().count(), 64);
    }

    #[test]
    fn missing_file_is_a_missing_artifact() {
        let err = load_rgb(Path::new("/nonexistent/x.png")).unwrap_err();
        assert!(matches!(err, Error::MissingArtifact(_)), "{err}");
        assert!(err.to_string().contains("/nonexistent/x.png"));
    }
}
