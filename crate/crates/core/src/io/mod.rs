//! Image buffers and the on-disk formats: PFM/PNG images, weight blobs and
//! validation CSV.

mod blob;
mod pfm;

pub use blob::{read_blob, write_blob, BlobSidecar, BLOB_MAGIC, BLOB_VERSION};
pub use pfm::{read_pfm, write_pfm};

use std::io::Write;
use std::path::Path;

use crate::sh::Rgb;
use crate::{Error, Result};

/// Linear RGB image, row-major with row 0 at the top.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    width: usize,
    height: usize,
    data: Vec<Rgb>,
}

impl Image {
    pub fn new(width: usize, height: usize) -> Self {
        Image {
            width,
            height,
            data: vec![[0.0; 3]; width * height],
        }
    }

    pub fn from_pixels(width: usize, height: usize, data: Vec<Rgb>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::DimensionMismatch {
                expected: width * height,
                got: data.len(),
            });
        }
        Ok(Image { width, height, data })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn get(&self, x: usize, y: usize) -> Rgb {
        self.data[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, v: Rgb) {
        self.data[y * self.width + x] = v;
    }

    pub fn pixels(&self) -> &[Rgb] {
        &self.data
    }

    pub fn pixels_mut(&mut self) -> &mut [Rgb] {
        &mut self.data
    }

    pub fn map(&self, f: impl Fn(Rgb) -> Rgb) -> Image {
        Image {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|p| f(*p)).collect(),
        }
    }

    pub fn same_shape(&self, other: &Image) -> bool {
        self.width == other.width && self.height == other.height
    }
}

/// Standard sRGB-style display transfer (2.4 exponent, linear toe).
pub fn linear_to_display(v: f64) -> f64 {
    let v = v.clamp(0.0, 1.0);
    if v <= 0.003_130_8 {
        12.92 * v
    } else {
        1.055 * v.powf(1.0 / 2.4) - 0.055
    }
}

/// Writes an 8-bit PNG after the display transfer.
pub fn write_png(path: &Path, img: &Image) -> Result<()> {
    let mut buf = image::RgbImage::new(img.width as u32, img.height as u32);
    for (i, p) in img.data.iter().enumerate() {
        let px = image::Rgb(p.map(|v| (linear_to_display(v) * 255.0 + 0.5) as u8));
        buf.put_pixel((i % img.width) as u32, (i / img.width) as u32, px);
    }
    buf.save(path)?;
    Ok(())
}

/// One row of a validation CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct ValidationRow {
    pub test: String,
    pub parameter: String,
    pub estimate: f64,
    pub std_error: f64,
    pub reference: f64,
    pub rel_error: f64,
}

pub const VALIDATION_HEADER: &str = "test,parameter,estimate,std_error,reference,rel_error";

pub fn write_validation_csv<W: Write>(mut w: W, rows: &[ValidationRow]) -> Result<()> {
    writeln!(w, "{VALIDATION_HEADER}")?;
    for r in rows {
        writeln!(
            w,
            "{},{},{:e},{:e},{:e},{:e}",
            r.test, r.parameter, r.estimate, r.std_error, r.reference, r.rel_error
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn display_transfer_endpoints() {
        assert_eq!(linear_to_display(0.0), 0.0);
        assert!((linear_to_display(1.0) - 1.0).abs() < 1e-12);
        assert!((linear_to_display(0.18) - 0.4613).abs() < 1e-3);
    }

    #[test]
    fn png_writes() {
        let dir = tempfile::tempdir().unwrap();
        let mut img = Image::new(4, 3);
        img.set(1, 2, [1.0, 0.5, 0.0]);
        let p = dir.path().join("a.png");
        write_png(&p, &img).unwrap();
        let back = image::open(&p).unwrap().to_rgb8();
        assert_eq!(back.get_pixel(1, 2).0, [255, 188, 0]);
    }

    #[test]
    fn csv_header() {
        let mut out = Vec::new();
        write_validation_csv(&mut out, &[]).unwrap();
        assert_eq!(String::from_utf8(out).unwrap().trim(), VALIDATION_HEADER);
    }
}
