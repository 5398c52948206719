//! Binary PGM (P5) reading and writing for images and masks.
//!
//! Reading accepts 8-bit (maxval <= 255) and 16-bit big-endian (maxval <=
//! 65535) rasters and tolerates `#` comments in the header. Intensities are
//! normalized to [0, 1] as value / maxval at ingestion. Images are written as
//! 16-bit with maxval 65535 to keep round-trip quantization error below
//! 1/65535; masks are written 8-bit with maxval 255 using {0, 255}.

use std::fs;
use std::io::Write as _;
use std::path::Path;

use crate::error::{RegError, Result};
use crate::image::{Image, Mask};

fn io_err(path: &Path, e: std::io::Error) -> RegError {
    RegError::Io(path.display().to_string(), e)
}

fn fmt_err(path: &Path, msg: impl Into<String>) -> RegError {
    RegError::PgmFormat(path.display().to_string(), msg.into())
}

/// Header fields plus the offset where pixel data begins.
struct Header {
    width: usize,
    height: usize,
    maxval: u32,
    data_start: usize,
}

/// Parse the P5 header: magic, width, height, maxval, separated by
/// whitespace, with `#` comments running to end of line. Exactly one
/// whitespace byte follows maxval before the raster.
fn parse_header(path: &Path, bytes: &[u8]) -> Result<Header> {
    if bytes.len() < 2 || &bytes[0..2] != b"P5" {
        return Err(fmt_err(path, "missing P5 magic"));
    }
    let mut pos = 2;
    let mut fields = [0u32; 3];
    for field in &mut fields {
        // Skip whitespace and comments.
        loop {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < bytes.len() && bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                break;
            }
        }
        let start = pos;
        while pos < bytes.len() && bytes[pos].is_ascii_digit() {
            pos += 1;
        }
        if pos == start {
            return Err(fmt_err(path, "truncated header"));
        }
        let text = std::str::from_utf8(&bytes[start..pos]).unwrap();
        *field = text
            .parse::<u32>()
            .map_err(|_| fmt_err(path, format!("bad header field `{text}`")))?;
    }
    if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
        return Err(fmt_err(path, "missing whitespace after maxval"));
    }
    pos += 1;
    let (width, height, maxval) = (fields[0] as usize, fields[1] as usize, fields[2]);
    if width == 0 || height == 0 {
        return Err(fmt_err(path, "zero dimension"));
    }
    if maxval == 0 || maxval > 65535 {
        return Err(fmt_err(path, format!("maxval {maxval} out of range 1..=65535")));
    }
    Ok(Header { width, height, maxval, data_start: pos })
}

fn read_raw(path: &Path) -> Result<(Header, Vec<u32>)> {
    let bytes = fs::read(path).map_err(|e| io_err(path, e))?;
    let h = parse_header(path, &bytes)?;
    let n = h.width * h.height;
    let raster = &bytes[h.data_start..];
    let values: Vec<u32> = if h.maxval <= 255 {
        if raster.len() < n {
            return Err(fmt_err(path, "raster shorter than header promises"));
        }
        raster[..n].iter().map(|b| *b as u32).collect()
    } else {
        if raster.len() < 2 * n {
            return Err(fmt_err(path, "raster shorter than header promises"));
        }
        raster[..2 * n]
            .chunks_exact(2)
            .map(|p| ((p[0] as u32) << 8) | p[1] as u32)
            .collect()
    };
    Ok((h, values))
}

/// Read a grayscale image, normalizing intensities to [0, 1].
pub fn read_image(path: &Path) -> Result<Image> {
    let (h, values) = read_raw(path)?;
    let scale = 1.0 / h.maxval as f64;
    let data = values.iter().map(|v| *v as f64 * scale).collect();
    Ok(Image::new(h.width, h.height, data))
}

/// Read a mask: foreground is any value strictly above maxval / 2.
pub fn read_mask(path: &Path) -> Result<Mask> {
    let (h, values) = read_raw(path)?;
    let thresh = h.maxval / 2;
    let data = values.iter().map(|v| *v > thresh).collect();
    Ok(Mask::new(h.width, h.height, data))
}

/// Write an image as 16-bit big-endian P5 with maxval 65535. Values are
/// clamped to [0, 1] and rounded.
pub fn write_image(path: &Path, img: &Image) -> Result<()> {
    let mut out = Vec::with_capacity(32 + 2 * img.data().len());
    write!(out, "P5\n{} {}\n65535\n", img.width(), img.height()).unwrap();
    for &v in img.data() {
        let q = (v.clamp(0.0, 1.0) * 65535.0).round() as u16;
        out.extend_from_slice(&q.to_be_bytes());
    }
    fs::write(path, out).map_err(|e| io_err(path, e))
}

/// Write a mask as 8-bit P5 with maxval 255, foreground 255, background 0.
pub fn write_mask(path: &Path, mask: &Mask) -> Result<()> {
    let mut out = Vec::with_capacity(32 + mask.data().len());
    write!(out, "P5\n{} {}\n255\n", mask.width(), mask.height()).unwrap();
    out.extend(mask.data().iter().map(|v| if *v { 255u8 } else { 0u8 }));
    fs::write(path, out).map_err(|e| io_err(path, e))
}
