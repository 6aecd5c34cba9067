//! Portable float map: `PF\n<w> <h>\n<scale>\n` followed by little-endian
//! (negative scale) f32 RGB triplets, bottom row first.

use std::fs;
use std::path::Path;

use super::Image;
use crate::{Error, Result};

pub fn write_pfm(path: &Path, img: &Image) -> Result<()> {
    let mut out = format!("PF\n{} {}\n-1.0\n", img.width(), img.height()).into_bytes();
    for y in (0..img.height()).rev() {
        for x in 0..img.width() {
            for v in img.get(x, y) {
                out.extend_from_slice(&(v as f32).to_le_bytes());
            }
        }
    }
    fs::write(path, out)?;
    Ok(())
}

pub fn read_pfm(path: &Path) -> Result<Image> {
    let bytes = fs::read(path)?;
    let err = |msg: &str| Error::Format {
        path: path.to_path_buf(),
        msg: msg.to_string(),
    };
    // three whitespace-terminated header tokens after the magic line
    let mut tokens = Vec::new();
    let mut pos = 0;
    while tokens.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(err("truncated header"));
        }
        tokens.push(String::from_utf8_lossy(&bytes[start..pos]).to_string());
    }
    pos += 1; // single whitespace byte before the raster
    let channels = match tokens[0].as_str() {
        "PF" => 3,
        "Pf" => 1,
        _ => return Err(err("bad magic")),
    };
    let w: usize = tokens[1].parse().map_err(|_| err("bad width"))?;
    let h: usize = tokens[2].parse().map_err(|_| err("bad height"))?;
    let scale: f64 = tokens[3].parse().map_err(|_| err("bad scale"))?;
    let little = scale < 0.0;
    let need = w * h * channels * 4;
    if bytes.len() < pos + need {
        return Err(err("truncated raster"));
    }
    let raster = &bytes[pos..pos + need];
    let mut img = Image::new(w, h);
    for (i, chunk) in raster.chunks_exact(4 * channels).enumerate() {
        let mut px = [0.0; 3];
        for c in 0..channels {
            let b: [u8; 4] = chunk[4 * c..4 * c + 4].try_into().unwrap();
            let v = if little { f32::from_le_bytes(b) } else { f32::from_be_bytes(b) };
            px[c] = v as f64;
        }
        if channels == 1 {
            px = [px[0]; 3];
        }
        let (x, row) = (i % w, i / w);
        img.set(x, h - 1 - row, px);
    }
    Ok(img)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_preserves_f32_values() {
        let dir = tempfile::tempdir().unwrap();
        let mut img = Image::new(3, 2);
        img.set(0, 0, [0.25, -1.5, 1e3]);
        img.set(2, 1, [0.125, 7.0, 0.0]);
        let p = dir.path().join("x.pfm");
        write_pfm(&p, &img).unwrap();
        assert_eq!(read_pfm(&p).unwrap(), img);
        let raw = std::fs::read(&p).unwrap();
        assert!(raw.starts_with(b"PF\n3 2\n-1.0\n"));
    }

    #[test]
    fn rejects_garbage() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.pfm");
        std::fs::write(&p, b"P6\n1 1\n255\n").unwrap();
        assert!(read_pfm(&p).is_err());
    }
}
