//! PPM (P6) and 8-bit RGB PNG codecs.

use std::io::Cursor;
use std::path::Path;

use super::{Image, CHANNELS};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ImageFormat {
    Ppm,
    Png,
}

impl ImageFormat {
    pub fn from_path(path: &Path) -> Option<Self> {
        match path.extension()?.to_str()?.to_ascii_lowercase().as_str() {
            "ppm" => Some(ImageFormat::Ppm),
            "png" => Some(ImageFormat::Png),
            _ => None,
        }
    }

    pub fn extension(self) -> &'static str {
        match self {
            ImageFormat::Ppm => "ppm",
            ImageFormat::Png => "png",
        }
    }
}

fn decode_err(offset: usize, reason: impl Into<String>) -> Error {
    Error::Decode {
        offset,
        reason: reason.into(),
    }
}

pub fn decode_image(bytes: &[u8], format: ImageFormat) -> Result<Image> {
    match format {
        ImageFormat::Ppm => decode_ppm(bytes),
        ImageFormat::Png => decode_png(bytes),
    }
}

struct HeaderCursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl HeaderCursor<'_> {
    fn skip_space_and_comments(&mut self) {
        while self.pos < self.bytes.len() {
            match self.bytes[self.pos] {
                b'#' => {
                    while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                        self.pos += 1;
                    }
                }
                b if b.is_ascii_whitespace() => self.pos += 1,
                _ => break,
            }
        }
    }

    fn number(&mut self, what: &str) -> Result<usize> {
        self.skip_space_and_comments();
        let start = self.pos;
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(decode_err(start, format!("expected {what}")));
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| decode_err(start, format!("{what} out of range")))
    }
}

fn decode_ppm(bytes: &[u8]) -> Result<Image> {
    if bytes.len() < 2 || &bytes[..2] != b"P6" {
        return Err(decode_err(0, "missing P6 magic"));
    }
    let mut cur = HeaderCursor { bytes, pos: 2 };
    let width = cur.number("width")?;
    let height = cur.number("height")?;
    let maxval_at = cur.pos;
    let maxval = cur.number("maxval")?;
    if width == 0 || height == 0 {
        return Err(decode_err(maxval_at, format!("degenerate size {width}x{height}")));
    }
    if maxval == 0 || maxval > 255 {
        return Err(decode_err(
            maxval_at,
            format!("unsupported bit depth (maxval {maxval}); only 8-bit is supported"),
        ));
    }
    match bytes.get(cur.pos) {
        Some(b) if b.is_ascii_whitespace() => cur.pos += 1,
        _ => return Err(decode_err(cur.pos, "expected single whitespace after maxval")),
    }
    let need = width
        .checked_mul(height)
        .and_then(|n| n.checked_mul(CHANNELS))
        .ok_or_else(|| decode_err(0, "image dimensions overflow"))?;
    let payload = &bytes[cur.pos..];
    if payload.len() < need {
        return Err(decode_err(
            bytes.len(),
            format!("truncated payload: {} of {need} bytes", payload.len()),
        ));
    }
    let scale = maxval as f64;
    let mut data = Vec::with_capacity(need);
    for (i, &b) in payload[..need].iter().enumerate() {
        if b as usize > maxval {
            return Err(decode_err(cur.pos + i, format!("sample {b} exceeds maxval {maxval}")));
        }
        data.push(b as f64 / scale);
    }
    Image::new(height, width, data)
}

fn decode_png(bytes: &[u8]) -> Result<Image> {
    let decoder = png::Decoder::new(Cursor::new(bytes));
    let mut reader = decoder
        .read_info()
        .map_err(|e| decode_err(0, format!("png header: {e}")))?;
    let info = reader.info();
    let (width, height) = (info.width as usize, info.height as usize);
    if info.bit_depth != png::BitDepth::Eight {
        return Err(decode_err(0, format!("unsupported bit depth {:?}", info.bit_depth)));
    }
    if info.color_type != png::ColorType::Rgb {
        return Err(decode_err(0, format!("unsupported colour type {:?}; need RGB", info.color_type)));
    }
    if info.interlaced {
        return Err(decode_err(0, "interlaced PNG is not supported"));
    }
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| decode_err(0, "png output size overflow"))?;
    let mut buf = vec![0u8; size];
    let frame = reader
        .next_frame(&mut buf)
        .map_err(|e| decode_err(0, format!("png payload: {e}")))?;
    let line = frame.line_size;
    let mut data = Vec::with_capacity(width * height * CHANNELS);
    for row in buf.chunks(line).take(height) {
        data.extend(row[..width * CHANNELS].iter().map(|&b| b as f64 / 255.0));
    }
    Image::new(height, width, data)
}

fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Encodes as binary PPM with maxval 255. Values are clamped to `[0, 1]`.
pub fn encode_ppm(image: &Image) -> Vec<u8> {
    let mut out = format!("P6\n{} {}\n255\n", image.width(), image.height()).into_bytes();
    out.extend(image.data().iter().map(|&v| quantize(v)));
    out
}

pub fn encode_png(image: &Image) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, image.width() as u32, image.height() as u32);
        enc.set_color(png::ColorType::Rgb);
        enc.set_depth(png::BitDepth::Eight);
        let mut writer = enc
            .write_header()
            .map_err(|e| Error::Invariant(format!("png encode: {e}")))?;
        let bytes: Vec<u8> = image.data().iter().map(|&v| quantize(v)).collect();
        writer
            .write_image_data(&bytes)
            .map_err(|e| Error::Invariant(format!("png encode: {e}")))?;
    }
    Ok(out)
}

/// Reads an image, choosing the codec by file extension.
pub fn read_image(path: &Path) -> Result<Image> {
    let format = ImageFormat::from_path(path)
        .ok_or_else(|| Error::Data(format!("{}: unknown image extension", path.display())))?;
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_image(&bytes, format).map_err(|e| Error::Data(format!("{}: {e}", path.display())))
}

pub fn write_image(path: &Path, image: &Image) -> Result<()> {
    let bytes = match ImageFormat::from_path(path) {
        Some(ImageFormat::Png) => encode_png(image)?,
        Some(ImageFormat::Ppm) => encode_ppm(image),
        None => return Err(Error::Data(format!("{}: unknown image extension", path.display()))),
    };
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}
