//! Grayscale images: decoding, encoding, enhancement and augmentation.

mod augment;
mod clahe;
mod transform;

use std::io::Cursor;
use std::path::Path;

pub use augment::{augment, augment_variant, AUGMENT_VARIANTS, NOISE_SIGMAS};
pub use clahe::{clahe, ClaheParams};
pub use transform::{resize_bilinear, to_network_input, NETWORK_SIZE};

use crate::error::{io_err, Error, Result};

const PNG_SIGNATURE: [u8; 8] = [0x89, b'P', b'N', b'G', 0x0d, 0x0a, 0x1a, 0x0a];

/// Single-channel 8-bit image, row-major.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    pixels: Vec<u8>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, pixels: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidArgument(format!("image extents must be positive, got {width}x{height}")));
        }
        if width.checked_mul(height) != Some(pixels.len()) {
            return Err(Error::InvalidArgument(format!(
                "{width}x{height} image needs {} pixels, got {}",
                width.saturating_mul(height),
                pixels.len()
            )));
        }
        Ok(Self { width, height, pixels })
    }

    pub fn filled(width: usize, height: usize, value: u8) -> Result<Self> {
        Self::new(width, height, vec![value; width.saturating_mul(height)])
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> u8) -> Result<Self> {
        let mut pixels = Vec::with_capacity(width.saturating_mul(height));
        for y in 0..height {
            for x in 0..width {
                pixels.push(f(x, y));
            }
        }
        Self::new(width, height, pixels)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn into_pixels(self) -> Vec<u8> {
        self.pixels
    }

    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.pixels[y * self.width + x]
    }

    pub fn mean(&self) -> f64 {
        self.pixels.iter().map(|&p| p as f64).sum::<f64>() / self.pixels.len() as f64
    }

    pub fn hflip(&self) -> GrayImage {
        let mut pixels = self.pixels.clone();
        for row in pixels.chunks_exact_mut(self.width) {
            row.reverse();
        }
        GrayImage { pixels, ..*self }
    }

    pub fn vflip(&self) -> GrayImage {
        let pixels = self.pixels.chunks_exact(self.width).rev().flatten().copied().collect();
        GrayImage { pixels, ..*self }
    }
}

/// Decodes PGM (P5) or PNG, chosen by the leading magic bytes.
pub fn decode_image(bytes: &[u8]) -> Result<GrayImage> {
    if bytes.starts_with(b"P5") {
        decode_pgm(bytes)
    } else if bytes.starts_with(&PNG_SIGNATURE) {
        decode_png(bytes)
    } else {
        Err(Error::Unsupported("neither a binary PGM (P5) nor a PNG signature".into()))
    }
}

pub fn load_image(path: impl AsRef<Path>) -> Result<GrayImage> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(io_err(path))?;
    decode_image(&bytes).map_err(|e| match e {
        Error::Decode(m) => Error::Decode(format!("{}: {m}", path.display())),
        Error::Unsupported(m) => Error::Unsupported(format!("{}: {m}", path.display())),
        other => other,
    })
}

/// Writes PNG when the extension is `.png`, PGM otherwise.
pub fn save_image(img: &GrayImage, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let is_png = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("png"));
    let bytes = if is_png { encode_png(img)? } else { encode_pgm(img) };
    std::fs::write(path, bytes).map_err(io_err(path))
}

pub fn encode_pgm(img: &GrayImage) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", img.width, img.height).into_bytes();
    out.extend_from_slice(&img.pixels);
    out
}

/// Binary PGM. Samples are returned as stored (no rescaling when maxval is
/// below 255); 16-bit files are rejected.
pub fn decode_pgm(bytes: &[u8]) -> Result<GrayImage> {
    if !bytes.starts_with(b"P5") {
        return Err(Error::Decode("PGM magic `P5` not found".into()));
    }
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for (slot, name) in fields.iter_mut().zip(["width", "height", "maxval"]) {
        // whitespace and comments between header fields
        loop {
            match bytes.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                _ => break,
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        if start == pos {
            return Err(Error::Decode(format!("PGM header: expected {name}")));
        }
        let text = std::str::from_utf8(&bytes[start..pos]).expect("ascii digits");
        *slot = text
            .parse()
            .ok()
            .filter(|&v| v > 0)
            .ok_or_else(|| Error::Decode(format!("PGM header: invalid {name} `{text}`")))?;
    }
    match bytes.get(pos) {
        Some(b) if b.is_ascii_whitespace() => pos += 1,
        _ => return Err(Error::Decode("PGM header: missing whitespace after maxval".into())),
    }
    let [width, height, maxval] = fields;
    if maxval > 255 {
        return Err(Error::Unsupported(format!("PGM maxval {maxval} implies 16-bit samples; only 8-bit is supported")));
    }
    let expected = width
        .checked_mul(height)
        .ok_or_else(|| Error::Decode(format!("PGM dimensions {width}x{height} overflow")))?;
    let actual = bytes.len() - pos;
    if actual < expected {
        return Err(Error::Decode(format!("PGM payload truncated: expected {expected} bytes, found {actual}")));
    }
    GrayImage::new(width, height, bytes[pos..pos + expected].to_vec())
}

pub fn decode_png(bytes: &[u8]) -> Result<GrayImage> {
    let png_err = |e: png::DecodingError| Error::Decode(format!("PNG: {e}"));
    let mut decoder = png::Decoder::new(Cursor::new(bytes));
    decoder.set_transformations(png::Transformations::EXPAND);
    let mut reader = decoder.read_info().map_err(png_err)?;
    let (color, depth) = reader.output_color_type();
    if depth != png::BitDepth::Eight {
        return Err(Error::Unsupported(format!("PNG bit depth {depth:?}; only 8-bit is supported")));
    }
    let size = reader.output_buffer_size().ok_or_else(|| Error::Decode("PNG: image too large".into()))?;
    let mut buf = vec![0; size];
    let info = reader.next_frame(&mut buf).map_err(png_err)?;
    let (w, h) = (info.width as usize, info.height as usize);
    let channels = color.samples();
    let line = info.line_size;
    let mut pixels = Vec::with_capacity(w * h);
    for row in buf.chunks(line).take(h) {
        for px in row.chunks_exact(channels).take(w) {
            pixels.push(match color {
                png::ColorType::Grayscale | png::ColorType::GrayscaleAlpha => px[0],
                _ => luma(px[0], px[1], px[2]),
            });
        }
    }
    GrayImage::new(w, h, pixels)
}

/// ITU-R BT.601 weights, rounded.
fn luma(r: u8, g: u8, b: u8) -> u8 {
    (0.299 * r as f64 + 0.587 * g as f64 + 0.114 * b as f64).round().min(255.0) as u8
}

pub fn encode_png(img: &GrayImage) -> Result<Vec<u8>> {
    let png_err = |e: png::EncodingError| Error::InvalidArgument(format!("PNG encode: {e}"));
    let mut out = Vec::new();
    let mut encoder = png::Encoder::new(&mut out, img.width as u32, img.height as u32);
    encoder.set_color(png::ColorType::Grayscale);
    encoder.set_depth(png::BitDepth::Eight);
    let mut writer = encoder.write_header().map_err(png_err)?;
    writer.write_image_data(&img.pixels).map_err(png_err)?;
    writer.finish().map_err(png_err)?;
    Ok(out)
}
