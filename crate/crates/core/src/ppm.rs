//! Binary PPM (P6) and PGM (P5) image I/O, 8-bit.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::image::Image;

/// Read a binary PGM (P5, 1 channel) or PPM (P6, 3 channels) file.
/// Values are scaled from [0, maxval] to [0, 1].
pub fn read_image(path: &Path) -> Result<Image> {
    let bytes = fs::read(path)?;
    parse(&bytes).map_err(|msg| Error::Format(format!("{}: {msg}", path.display())))
}

/// Write an image as PGM (1 channel) or PPM (3 channels), 8-bit binary.
/// Values are clamped to [0, 1] and scaled to 0..=255 with rounding.
pub fn write_image(path: &Path, img: &Image) -> Result<()> {
    let magic = match img.channels() {
        1 => "P5",
        3 => "P6",
        _ => unreachable!("image channels are validated to 1 or 3"),
    };
    let mut out = Vec::with_capacity(img.data().len() + 32);
    write!(out, "{magic}\n{} {}\n255\n", img.width(), img.height())?;
    out.extend(
        img.data()
            .iter()
            .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8),
    );
    fs::write(path, out)?;
    Ok(())
}

fn parse(bytes: &[u8]) -> std::result::Result<Image, String> {
    let mut pos = 0usize;
    let magic = token(bytes, &mut pos).ok_or("missing magic")?;
    let channels = match magic.as_str() {
        "P5" => 1,
        "P6" => 3,
        other => return Err(format!("unsupported magic {other:?} (want P5 or P6)")),
    };
    let width: usize = token(bytes, &mut pos)
        .ok_or("missing width")?
        .parse()
        .map_err(|_| "bad width")?;
    let height: usize = token(bytes, &mut pos)
        .ok_or("missing height")?
        .parse()
        .map_err(|_| "bad height")?;
    let maxval: usize = token(bytes, &mut pos)
        .ok_or("missing maxval")?
        .parse()
        .map_err(|_| "bad maxval")?;
    if maxval == 0 || maxval > 255 {
        return Err(format!("maxval {maxval} unsupported (8-bit only)"));
    }
    // Exactly one whitespace byte separates the header from the raster.
    let n = width * height * channels;
    let raster = bytes
        .get(pos..pos + n)
        .ok_or_else(|| format!("truncated raster, want {n} bytes"))?;
    let scale = 1.0 / maxval as f64;
    let data = raster.iter().map(|&b| b as f64 * scale).collect();
    Image::new(height, width, channels, data).map_err(|e| e.to_string())
}

/// Next whitespace-delimited header token, skipping `#` comments. Advances
/// `pos` past the single whitespace byte that terminates the token.
fn token(bytes: &[u8], pos: &mut usize) -> Option<String> {
    while *pos < bytes.len() {
        let b = bytes[*pos];
        if b == b'#' {
            while *pos < bytes.len() && bytes[*pos] != b'\n' {
                *pos += 1;
            }
        } else if b.is_ascii_whitespace() {
            *pos += 1;
        } else {
            break;
        }
    }
    let start = *pos;
    while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    if *pos > start {
        let tok = String::from_utf8_lossy(&bytes[start..*pos]).into_owned();
        if *pos < bytes.len() {
            *pos += 1; // consume the single terminating whitespace byte
        }
        Some(tok)
    } else {
        None
    }
}
