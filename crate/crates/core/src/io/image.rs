//! 8-bit grayscale mask codecs (binary PGM and PNG).

use std::fs;
use std::io::Cursor;
use std::path::Path;

use crate::error::{Error, Result};
use crate::mask::BinaryMask;

/// Gray level at or above which a pixel is foreground.
pub const FOREGROUND_LEVEL: u8 = 128;

const PNG_MAGIC: &[u8] = b"\x89PNG\r\n\x1a\n";

/// An 8-bit grayscale raster.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GrayImage {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
}

impl GrayImage {
    pub fn to_mask(&self) -> Result<BinaryMask> {
        BinaryMask::from_fn(self.width, self.height, |i, j| {
            self.pixels[i * self.width + j] >= FOREGROUND_LEVEL
        })
    }

    pub fn from_mask(mask: &BinaryMask) -> Self {
        Self {
            width: mask.width(),
            height: mask.height(),
            pixels: mask.iter().map(|fg| if fg { 255 } else { 0 }).collect(),
        }
    }
}

fn skip_whitespace_and_comments(data: &[u8], pos: &mut usize) {
    while *pos < data.len() {
        match data[*pos] {
            b'#' => {
                while *pos < data.len() && data[*pos] != b'\n' {
                    *pos += 1;
                }
            }
            c if c.is_ascii_whitespace() => *pos += 1,
            _ => break,
        }
    }
}

fn read_header_int(data: &[u8], pos: &mut usize, what: &str) -> std::result::Result<usize, String> {
    skip_whitespace_and_comments(data, pos);
    let start = *pos;
    while *pos < data.len() && data[*pos].is_ascii_digit() {
        *pos += 1;
    }
    std::str::from_utf8(&data[start..*pos])
        .ok()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| format!("malformed PGM header: bad {what}"))
}

/// Decodes a binary (P5) PGM with maxval at most 255.
///
/// Samples are rescaled to 0..=255 when maxval is below 255.
pub fn decode_pgm(data: &[u8]) -> std::result::Result<GrayImage, String> {
    if data.len() < 2 || &data[..2] != b"P5" {
        return Err("not a binary PGM (expected P5 magic)".into());
    }
    let mut pos = 2;
    let width = read_header_int(data, &mut pos, "width")?;
    let height = read_header_int(data, &mut pos, "height")?;
    let maxval = read_header_int(data, &mut pos, "maxval")?;
    if width == 0 || height == 0 {
        return Err(format!("zero dimensions {width}x{height}"));
    }
    if maxval == 0 || maxval > 255 {
        return Err(format!("unsupported bit depth (maxval {maxval})"));
    }
    // exactly one whitespace byte separates the header from the raster
    if pos >= data.len() || !data[pos].is_ascii_whitespace() {
        return Err("malformed PGM header".into());
    }
    pos += 1;
    let n = width * height;
    let raster = data.get(pos..pos + n).ok_or_else(|| {
        format!(
            "truncated PGM raster: need {n} bytes, have {}",
            data.len() - pos
        )
    })?;
    let pixels = if maxval == 255 {
        raster.to_vec()
    } else {
        raster
            .iter()
            .map(|&v| ((v.min(maxval as u8) as usize * 255 + maxval / 2) / maxval) as u8)
            .collect()
    };
    Ok(GrayImage {
        width,
        height,
        pixels,
    })
}

pub fn encode_pgm(image: &GrayImage) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", image.width, image.height).into_bytes();
    out.extend_from_slice(&image.pixels);
    out
}

/// Decodes an 8-bit grayscale PNG.
pub fn decode_png(data: &[u8]) -> std::result::Result<GrayImage, String> {
    let decoder = png::Decoder::new(Cursor::new(data));
    let mut reader = decoder
        .read_info()
        .map_err(|e| format!("PNG decode error: {e}"))?;
    let info = reader.info();
    if info.bit_depth != png::BitDepth::Eight {
        return Err(format!("unsupported bit depth {:?}", info.bit_depth));
    }
    if info.color_type != png::ColorType::Grayscale {
        return Err(format!(
            "unsupported color type {:?} (expected 8-bit grayscale)",
            info.color_type
        ));
    }
    let (width, height) = (info.width as usize, info.height as usize);
    if width == 0 || height == 0 {
        return Err("zero dimensions".into());
    }
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| "PNG too large".to_string())?;
    let mut buf = vec![0u8; size];
    let frame = reader
        .next_frame(&mut buf)
        .map_err(|e| format!("PNG decode error: {e}"))?;
    buf.truncate(frame.buffer_size());
    Ok(GrayImage {
        width,
        height,
        pixels: buf,
    })
}

fn encode_png_raw(width: usize, height: usize, color: png::ColorType, data: &[u8]) -> Vec<u8> {
    let mut out = Vec::new();
    {
        let mut encoder = png::Encoder::new(&mut out, width as u32, height as u32);
        encoder.set_color(color);
        encoder.set_depth(png::BitDepth::Eight);
        let mut writer = encoder.write_header().expect("in-memory PNG header");
        writer.write_image_data(data).expect("in-memory PNG data");
    }
    out
}

pub fn encode_png(image: &GrayImage) -> Vec<u8> {
    encode_png_raw(
        image.width,
        image.height,
        png::ColorType::Grayscale,
        &image.pixels,
    )
}

/// Encodes an interleaved RGB8 buffer.
pub fn encode_rgb_png(width: usize, height: usize, rgb: &[u8]) -> Vec<u8> {
    encode_png_raw(width, height, png::ColorType::Rgb, rgb)
}

/// Decodes a PGM or PNG by sniffing the magic bytes.
pub fn decode_gray(data: &[u8]) -> std::result::Result<GrayImage, String> {
    if data.starts_with(PNG_MAGIC) {
        decode_png(data)
    } else if data.starts_with(b"P5") {
        decode_pgm(data)
    } else {
        Err("unsupported image format (expected binary PGM or PNG)".into())
    }
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

pub(crate) fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Loads a mask from an 8-bit grayscale PGM or PNG; gray >= 128 is foreground.
pub fn load_mask(path: impl AsRef<Path>) -> Result<BinaryMask> {
    let path = path.as_ref();
    let image = decode_gray(&read(path)?).map_err(|m| Error::format(path, m))?;
    image.to_mask()
}

/// Saves a mask as 0/255 gray, PNG when the extension is `.png`, PGM otherwise.
pub fn save_mask(path: impl AsRef<Path>, mask: &BinaryMask) -> Result<()> {
    let path = path.as_ref();
    let image = GrayImage::from_mask(mask);
    let is_png = path
        .extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("png"));
    let bytes = if is_png {
        encode_png(&image)
    } else {
        encode_pgm(&image)
    };
    write(path, &bytes)
}
