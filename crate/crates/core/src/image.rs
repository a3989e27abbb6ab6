//! Grayscale image I/O (binary/ASCII PGM, 8-bit grayscale PNG), conversion
//! to network input and detection overlays.

use std::fs;
use std::path::Path;

use crate::eval::{PointKind, SingularPoint};
use crate::tensor::{FeatureMap, Shape};
use crate::{Error, Result};

/// Half-width of the overlay glyphs in pixels.
pub const GLYPH_HALF_WIDTH: usize = 5;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GrayImage {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize) -> Self {
        GrayImage { width, height, pixels: vec![0; width * height] }
    }

    /// Maps pixel values `v` to `v / 255`.
    pub fn to_feature_map(&self) -> FeatureMap<f32> {
        let data = self.pixels.iter().map(|&p| p as f32 / 255.0).collect();
        FeatureMap::from_vec(Shape::new(1, self.height, self.width), data).expect("pixel count matches")
    }

    /// Quantizes `[0, 1]` values (clamped) to 8 bits.
    pub fn from_unit(width: usize, height: usize, values: &[f64]) -> Self {
        assert_eq!(values.len(), width * height);
        GrayImage { width, height, pixels: values.iter().map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8).collect() }
    }

    pub fn encode_pgm(&self) -> Vec<u8> {
        let mut out = format!("P5\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.pixels);
        out
    }
}

/// Zero-pads the bottom and right edges up to the next multiple of `multiple`.
/// Pixel coordinates are unchanged by the padding.
pub fn pad_to_multiple(map: &FeatureMap<f32>, multiple: usize) -> FeatureMap<f32> {
    let s = map.shape();
    let h = s.height.div_ceil(multiple) * multiple;
    let w = s.width.div_ceil(multiple) * multiple;
    if (h, w) == (s.height, s.width) {
        return map.clone();
    }
    FeatureMap::from_fn(
        Shape::new(s.channels, h, w),
        |c, y, x| {
            if y < s.height && x < s.width {
                map.get(c, y, x)
            } else {
                0.0
            }
        },
    )
}

struct Tokens<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Tokens<'_> {
    fn skip_space(&mut self) {
        while self.pos < self.bytes.len() {
            match self.bytes[self.pos] {
                b'#' => {
                    while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                        self.pos += 1;
                    }
                }
                c if c.is_ascii_whitespace() => self.pos += 1,
                _ => break,
            }
        }
    }

    fn number(&mut self) -> Option<usize> {
        self.skip_space();
        let start = self.pos;
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        std::str::from_utf8(&self.bytes[start..self.pos]).ok()?.parse().ok()
    }
}

/// Decodes a P5 (binary) or P2 (ASCII) PGM. Sixteen-bit data is rescaled to
/// eight bits.
pub fn decode_pgm(bytes: &[u8]) -> std::result::Result<GrayImage, String> {
    let binary = match bytes.get(..2) {
        Some(b"P5") => true,
        Some(b"P2") => false,
        _ => return Err("not a PGM file".into()),
    };
    let mut tok = Tokens { bytes, pos: 2 };
    let width = tok.number().ok_or("missing width")?;
    let height = tok.number().ok_or("missing height")?;
    let maxval = tok.number().ok_or("missing maxval")?;
    if maxval == 0 || maxval > 65535 {
        return Err(format!("invalid maxval {maxval}"));
    }
    let n = width * height;
    let scale = |v: usize| ((v.min(maxval) * 255 + maxval / 2) / maxval) as u8;
    let pixels: Vec<u8> = if binary {
        // exactly one whitespace byte separates the header from the raster
        let start = tok.pos + 1;
        let per = if maxval < 256 { 1 } else { 2 };
        let raster =
            bytes.get(start..start + n * per).ok_or_else(|| format!("raster truncated: expected {} bytes", n * per))?;
        if per == 1 && maxval == 255 {
            raster.to_vec()
        } else if per == 1 {
            raster.iter().map(|&v| scale(v as usize)).collect()
        } else {
            raster.chunks_exact(2).map(|c| scale(u16::from_be_bytes([c[0], c[1]]) as usize)).collect()
        }
    } else {
        (0..n).map(|_| tok.number().map(scale).ok_or("raster truncated")).collect::<std::result::Result<_, _>>()?
    };
    Ok(GrayImage { width, height, pixels })
}

/// Decodes an 8-bit (or 16-bit, stripped) grayscale PNG; an alpha channel is
/// ignored.
pub fn decode_png(bytes: &[u8]) -> std::result::Result<GrayImage, String> {
    let mut decoder = png::Decoder::new(std::io::Cursor::new(bytes));
    decoder.set_transformations(png::Transformations::EXPAND | png::Transformations::STRIP_16);
    let mut reader = decoder.read_info().map_err(|e| e.to_string())?;
    let size = reader.output_buffer_size().ok_or("image too large")?;
    let mut buf = vec![0; size];
    let info = reader.next_frame(&mut buf).map_err(|e| e.to_string())?;
    let (width, height) = (info.width as usize, info.height as usize);
    let stride = match info.color_type {
        png::ColorType::Grayscale => 1,
        png::ColorType::GrayscaleAlpha => 2,
        other => return Err(format!("expected a grayscale PNG, found {other:?}")),
    };
    let mut pixels = Vec::with_capacity(width * height);
    for row in buf.chunks(info.line_size).take(height) {
        pixels.extend(row.iter().step_by(stride).take(width));
    }
    Ok(GrayImage { width, height, pixels })
}

/// Reads a PGM or PNG file, chosen by its magic bytes.
pub fn load_image(path: impl AsRef<Path>) -> Result<GrayImage> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let decoded = if bytes.starts_with(b"\x89PNG") { decode_png(&bytes) } else { decode_pgm(&bytes) };
    decoded.map_err(|detail| Error::Decode { path: path.to_path_buf(), detail })
}

pub fn save_pgm(image: &GrayImage, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, image.encode_pgm()).map_err(|e| Error::io(path, e))
}

/// Burns detection glyphs into the image: a filled white square for cores
/// and a hollow one (black-edged, so it shows on light ridges too) for deltas.
pub fn draw_overlay(image: &mut GrayImage, points: &[SingularPoint]) {
    let r = GLYPH_HALF_WIDTH as i64;
    for p in points {
        let (cx, cy) = (p.x.round() as i64, p.y.round() as i64);
        for dy in -r..=r {
            for dx in -r..=r {
                let (x, y) = (cx + dx, cy + dy);
                if x < 0 || y < 0 || x >= image.width as i64 || y >= image.height as i64 {
                    continue;
                }
                let idx = y as usize * image.width + x as usize;
                let edge = dx.abs().max(dy.abs());
                match p.kind {
                    PointKind::Core => image.pixels[idx] = 255,
                    PointKind::Delta if edge == r => image.pixels[idx] = 255,
                    PointKind::Delta if edge == r - 1 => image.pixels[idx] = 0,
                    PointKind::Delta => {}
                }
            }
        }
    }
}
