//! Binary page rasters and the portable-anymap codecs used to move them on
//! and off disk.
//!
//! PBM (`P1`, `P4`) is read as-is. Grayscale PGM (`P2`, `P5`) is binarized
//! with a global threshold expressed as a fraction of the maximum sample
//! value; pixels darker than the threshold become ink.

use std::fmt;
use std::io::Write;

use thiserror::Error;

/// Default global binarization threshold (50% intensity).
pub const DEFAULT_THRESHOLD: f64 = 0.5;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum RasterError {
    #[error("image dimensions must be at least 1x1, got {width}x{height}")]
    EmptyImage { width: usize, height: usize },
    #[error("pixel buffer holds {actual} pixels, expected {expected}")]
    BufferSize { expected: usize, actual: usize },
    #[error("malformed image: {0}")]
    Malformed(String),
    #[error("unsupported image format: {0}")]
    Unsupported(String),
}

/// A binarized page. `true` is ink.
#[derive(Clone, PartialEq, Eq)]
pub struct PageImage {
    width: usize,
    height: usize,
    pixels: Vec<bool>,
}

impl fmt::Debug for PageImage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("PageImage")
            .field("width", &self.width)
            .field("height", &self.height)
            .field("ink", &self.ink_count())
            .finish()
    }
}

impl PageImage {
    /// A blank (all-white) page.
    pub fn new(width: usize, height: usize) -> Result<Self, RasterError> {
        if width == 0 || height == 0 {
            return Err(RasterError::EmptyImage { width, height });
        }
        Ok(Self {
            width,
            height,
            pixels: vec![false; width * height],
        })
    }

    pub fn from_pixels(width: usize, height: usize, pixels: Vec<bool>) -> Result<Self, RasterError> {
        if width == 0 || height == 0 {
            return Err(RasterError::EmptyImage { width, height });
        }
        if pixels.len() != width * height {
            return Err(RasterError::BufferSize {
                expected: width * height,
                actual: pixels.len(),
            });
        }
        Ok(Self {
            width,
            height,
            pixels,
        })
    }

    /// Builds a page from rows of text, `#` marking ink. Handy for fixtures.
    pub fn from_ascii(rows: &[&str]) -> Result<Self, RasterError> {
        let height = rows.len();
        let width = rows.first().map_or(0, |r| r.chars().count());
        let mut pixels = Vec::with_capacity(width * height);
        for row in rows {
            if row.chars().count() != width {
                return Err(RasterError::Malformed("ragged ascii rows".into()));
            }
            pixels.extend(row.chars().map(|c| c == '#'));
        }
        Self::from_pixels(width, height, pixels)
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.pixels[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, ink: bool) {
        self.pixels[y * self.width + x] = ink;
    }

    pub fn pixels(&self) -> &[bool] {
        &self.pixels
    }

    pub fn row(&self, y: usize) -> &[bool] {
        &self.pixels[y * self.width..(y + 1) * self.width]
    }

    pub fn ink_count(&self) -> usize {
        self.pixels.iter().filter(|&&p| p).count()
    }

    /// Fills the axis-aligned rectangle, clipped to the page.
    pub fn fill_rect(&mut self, x: usize, y: usize, w: usize, h: usize) {
        let x_end = (x + w).min(self.width);
        let y_end = (y + h).min(self.height);
        for yy in y.min(self.height)..y_end {
            for xx in x.min(self.width)..x_end {
                self.set(xx, yy, true);
            }
        }
    }

    /// Copies out a sub-image. The rectangle must lie inside the page.
    pub fn crop(&self, x: usize, y: usize, w: usize, h: usize) -> Result<PageImage, RasterError> {
        if w == 0 || h == 0 || x + w > self.width || y + h > self.height {
            return Err(RasterError::Malformed(format!(
                "crop ({x},{y},{w},{h}) outside {}x{} page",
                self.width, self.height
            )));
        }
        let mut pixels = Vec::with_capacity(w * h);
        for yy in y..y + h {
            pixels.extend_from_slice(&self.row(yy)[x..x + w]);
        }
        PageImage::from_pixels(w, h, pixels)
    }

    /// Tight bounding box `(x, y, w, h)` of all ink, or `None` for a blank page.
    pub fn ink_bounds(&self) -> Option<(usize, usize, usize, usize)> {
        let (mut x0, mut y0, mut x1, mut y1) = (usize::MAX, usize::MAX, 0, 0);
        for y in 0..self.height {
            for (x, &p) in self.row(y).iter().enumerate() {
                if p {
                    x0 = x0.min(x);
                    y0 = y0.min(y);
                    x1 = x1.max(x);
                    y1 = y1.max(y);
                }
            }
        }
        (x0 != usize::MAX).then(|| (x0, y0, x1 - x0 + 1, y1 - y0 + 1))
    }

    /// Raw PBM (`P4`) encoding.
    pub fn to_pbm(&self) -> Vec<u8> {
        let row_bytes = self.width.div_ceil(8);
        let mut out = format!("P4\n{} {}\n", self.width, self.height).into_bytes();
        out.reserve(row_bytes * self.height);
        for y in 0..self.height {
            let row = self.row(y);
            for chunk in row.chunks(8) {
                let mut byte = 0u8;
                for (bit, &p) in chunk.iter().enumerate() {
                    if p {
                        byte |= 0x80 >> bit;
                    }
                }
                out.push(byte);
            }
        }
        out
    }

    pub fn write_pbm<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        w.write_all(&self.to_pbm())
    }

    /// Decodes any of `P1`, `P2`, `P4`, `P5`. `threshold` is the fraction of
    /// the maximum gray value below which a PGM sample counts as ink.
    pub fn from_pnm(bytes: &[u8], threshold: f64) -> Result<PageImage, RasterError> {
        let mut hdr = HeaderReader { bytes, pos: 0 };
        let magic = hdr.magic()?;
        let width = hdr.number()?;
        let height = hdr.number()?;
        if width == 0 || height == 0 {
            return Err(RasterError::EmptyImage { width, height });
        }
        let n = width
            .checked_mul(height)
            .ok_or_else(|| RasterError::Malformed("image too large".into()))?;
        match magic {
            b'1' => {
                let mut pixels = Vec::with_capacity(n);
                let mut pos = hdr.pos;
                while pixels.len() < n {
                    match bytes.get(pos) {
                        Some(b'0') => pixels.push(false),
                        Some(b'1') => pixels.push(true),
                        Some(b'#') => {
                            while pos < bytes.len() && bytes[pos] != b'\n' {
                                pos += 1;
                            }
                        }
                        Some(c) if c.is_ascii_whitespace() => {}
                        Some(&c) => {
                            return Err(RasterError::Malformed(format!(
                                "unexpected byte {c:#04x} in P1 data"
                            )))
                        }
                        None => return Err(RasterError::Malformed("truncated P1 data".into())),
                    }
                    pos += 1;
                }
                PageImage::from_pixels(width, height, pixels)
            }
            b'4' => {
                let data = hdr.binary_payload()?;
                let row_bytes = width.div_ceil(8);
                if data.len() < row_bytes * height {
                    return Err(RasterError::Malformed("truncated P4 data".into()));
                }
                let mut pixels = Vec::with_capacity(n);
                for y in 0..height {
                    let row = &data[y * row_bytes..(y + 1) * row_bytes];
                    for x in 0..width {
                        pixels.push(row[x / 8] & (0x80 >> (x % 8)) != 0);
                    }
                }
                PageImage::from_pixels(width, height, pixels)
            }
            b'2' | b'5' => {
                let maxval = hdr.number()?;
                if maxval == 0 || maxval > 65535 {
                    return Err(RasterError::Malformed(format!("bad maxval {maxval}")));
                }
                let cut = threshold * maxval as f64;
                let samples: Vec<usize> = if magic == b'2' {
                    (0..n).map(|_| hdr.number()).collect::<Result<_, _>>()?
                } else {
                    let data = hdr.binary_payload()?;
                    let wide = maxval > 255;
                    let need = if wide { 2 * n } else { n };
                    if data.len() < need {
                        return Err(RasterError::Malformed("truncated P5 data".into()));
                    }
                    if wide {
                        data[..need]
                            .chunks(2)
                            .map(|c| (usize::from(c[0]) << 8) | usize::from(c[1]))
                            .collect()
                    } else {
                        data[..n].iter().map(|&b| usize::from(b)).collect()
                    }
                };
                let pixels = samples.into_iter().map(|s| (s as f64) < cut).collect();
                PageImage::from_pixels(width, height, pixels)
            }
            other => Err(RasterError::Unsupported(format!("P{}", other as char))),
        }
    }
}

struct HeaderReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> HeaderReader<'a> {
    fn magic(&mut self) -> Result<u8, RasterError> {
        match self.bytes {
            [b'P', m, ..] => {
                self.pos = 2;
                Ok(*m)
            }
            _ => Err(RasterError::Malformed("missing PNM magic".into())),
        }
    }

    fn skip_space(&mut self) {
        while let Some(&c) = self.bytes.get(self.pos) {
            if c == b'#' {
                while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                    self.pos += 1;
                }
            } else if c.is_ascii_whitespace() {
                self.pos += 1;
            } else {
                break;
            }
        }
    }

    fn number(&mut self) -> Result<usize, RasterError> {
        self.skip_space();
        let start = self.pos;
        while self.bytes.get(self.pos).is_some_and(u8::is_ascii_digit) {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(RasterError::Malformed("expected a number in PNM header".into()));
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| RasterError::Malformed("number out of range".into()))
    }

    /// Raw formats have exactly one whitespace byte between header and data.
    fn binary_payload(&mut self) -> Result<&'a [u8], RasterError> {
        match self.bytes.get(self.pos) {
            Some(c) if c.is_ascii_whitespace() => Ok(&self.bytes[self.pos + 1..]),
            _ => Err(RasterError::Malformed("missing header terminator".into())),
        }
    }
}
