//! 8-bit PNG and binary PGM/PPM reading and writing.
//!
//! Bytes map linearly onto `[0, 1]`: `v = b / 255` on read and
//! `b = round(255 v)` on write.

use std::path::Path;

use image::codecs::pnm::{PnmEncoder, PnmSubtype, SampleEncoding};
use image::{DynamicImage, ExtendedColorType, GrayImage, ImageEncoder, ImageFormat, RgbImage};

use crate::error::{Error, Result};
use crate::image::{FieldImage, PixelImage};

fn format_for(path: &Path) -> Result<ImageFormat> {
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .map(|e| e.to_ascii_lowercase());
    match ext.as_deref() {
        Some("png") => Ok(ImageFormat::Png),
        Some("pgm" | "ppm" | "pnm") => Ok(ImageFormat::Pnm),
        _ => Err(Error::param(format!(
            "unsupported image extension for {} (png, pgm, ppm)",
            path.display()
        ))),
    }
}

pub fn read_image(path: impl AsRef<Path>) -> Result<PixelImage> {
    let path = path.as_ref();
    let format = format_for(path)?;
    let bytes = std::fs::read(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let decoded =
        image::load_from_memory_with_format(&bytes, format).map_err(|source| Error::Codec {
            path: path.to_path_buf(),
            source,
        })?;
    let (h, w) = (decoded.height() as usize, decoded.width() as usize);
    let (data, channels) = match decoded {
        DynamicImage::ImageLuma8(_) | DynamicImage::ImageLumaA8(_) => {
            (decoded.to_luma8().into_raw(), 1)
        }
        other => (other.to_rgb8().into_raw(), 3),
    };
    PixelImage::new(
        h,
        w,
        channels,
        data.iter().map(|&b| b as f64 / 255.0).collect(),
    )
}

fn to_bytes(img: &PixelImage) -> Vec<u8> {
    img.data()
        .iter()
        .map(|&v| (v * 255.0).round().clamp(0.0, 255.0) as u8)
        .collect()
}

pub fn write_image(path: impl AsRef<Path>, img: &PixelImage) -> Result<()> {
    let path = path.as_ref();
    let format = format_for(path)?;
    let (w, h) = (img.width() as u32, img.height() as u32);
    let bytes = to_bytes(img);
    let dynamic = match img.channels() {
        1 => DynamicImage::ImageLuma8(
            GrayImage::from_raw(w, h, bytes).expect("buffer sized from shape"),
        ),
        _ => DynamicImage::ImageRgb8(
            RgbImage::from_raw(w, h, bytes).expect("buffer sized from shape"),
        ),
    };
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|source| Error::Io {
            path: parent.to_path_buf(),
            source,
        })?;
    }
    let codec_err = |source| Error::Codec {
        path: path.to_path_buf(),
        source,
    };
    if format == ImageFormat::Pnm {
        let (subtype, color) = match img.channels() {
            1 => (PnmSubtype::Graymap(SampleEncoding::Binary), ExtendedColorType::L8),
            _ => (PnmSubtype::Pixmap(SampleEncoding::Binary), ExtendedColorType::Rgb8),
        };
        let file = std::fs::File::create(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let writer = std::io::BufWriter::new(file);
        return PnmEncoder::new(writer)
            .with_subtype(subtype)
            .write_image(dynamic.as_bytes(), w, h, color)
            .map_err(codec_err);
    }
    dynamic.save_with_format(path, format).map_err(codec_err)
}

/// Writes a field after clamping it into `[0, 1]`.
pub fn write_field(path: impl AsRef<Path>, field: &FieldImage) -> Result<()> {
    write_image(path, &field.to_pixel_clamped())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trips_through_every_format() {
        let dir = tempfile::tempdir().unwrap();
        let rgb = PixelImage::from_fn(3, 5, 3, |y, x, c| ((y * 15 + x * 3 + c) * 5) as f64 / 255.0)
            .unwrap();
        let gray = PixelImage::from_fn(4, 2, 1, |y, x, _| ((y * 2 + x) * 30) as f64 / 255.0)
            .unwrap();
        for (name, img) in [("a.png", &rgb), ("b.ppm", &rgb), ("c.pgm", &gray), ("d.png", &gray)] {
            let path = dir.path().join(name);
            write_image(&path, img).unwrap();
            let back = read_image(&path).unwrap();
            assert_eq!(&back, img, "{name}");
        }
        let pgm = std::fs::read(dir.path().join("c.pgm")).unwrap();
        assert!(pgm.starts_with(b"P5"));
        let ppm = std::fs::read(dir.path().join("b.ppm")).unwrap();
        assert!(ppm.starts_with(b"P6"));
    }

    #[test]
    fn rejects_unknown_extension() {
        let img = PixelImage::filled(2, 2, 1, 0.0).unwrap();
        assert!(write_image("x.bmp", &img).is_err());
        assert!(read_image("missing.png").is_err());
    }
}
