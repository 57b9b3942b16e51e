//! Raster data model and the binary PGM/PPM codec.
//!
//! Samples are linear intensities stored row-major as `f64`, interleaved by
//! channel. Loading maps byte `b` to `b / 255`; saving rounds half away from
//! zero, so the pair is the identity on every byte value.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    width: usize,
    height: usize,
    channels: usize,
    samples: Vec<f64>,
}

impl Image {
    pub fn new(width: usize, height: usize, channels: usize, samples: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::Shape(format!("empty image {width}x{height}")));
        }
        if !matches!(channels, 1 | 3) {
            return Err(Error::Shape(format!("unsupported channel count {channels}")));
        }
        if samples.len() != width * height * channels {
            return Err(Error::Shape(format!(
                "{} samples for a {width}x{height}x{channels} image",
                samples.len()
            )));
        }
        Ok(Image {
            width,
            height,
            channels,
            samples,
        })
    }

    pub fn filled(width: usize, height: usize, channels: usize, value: f64) -> Result<Self> {
        Self::new(width, height, channels, vec![value; width * height * channels])
    }

    /// Builds a single-channel image from `f(col, row)`.
    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> f64) -> Result<Self> {
        let samples = (0..height)
            .flat_map(|r| (0..width).map(move |c| (c, r)))
            .map(|(c, r)| f(c, r))
            .collect();
        Self::new(width, height, 1, samples)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn samples_mut(&mut self) -> &mut [f64] {
        &mut self.samples
    }

    pub fn into_samples(self) -> Vec<f64> {
        self.samples
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }

    #[inline]
    pub fn get(&self, col: usize, row: usize, channel: usize) -> f64 {
        self.samples[(row * self.width + col) * self.channels + channel]
    }

    #[inline]
    pub fn set(&mut self, col: usize, row: usize, channel: usize, value: f64) {
        self.samples[(row * self.width + col) * self.channels + channel] = value;
    }

    pub fn same_dims(&self, other: &Image) -> bool {
        self.width == other.width && self.height == other.height && self.channels == other.channels
    }

    pub(crate) fn check_same_dims(&self, other: &Image) -> Result<()> {
        if self.same_dims(other) {
            Ok(())
        } else {
            Err(Error::Shape(format!(
                "{}x{}x{} vs {}x{}x{}",
                self.width, self.height, self.channels, other.width, other.height, other.channels
            )))
        }
    }

    /// One channel as a row-major plane of `width * height` values.
    pub fn plane(&self, channel: usize) -> Vec<f64> {
        self.samples
            .iter()
            .skip(channel)
            .step_by(self.channels)
            .copied()
            .collect()
    }

    pub fn set_plane(&mut self, channel: usize, plane: &[f64]) {
        assert_eq!(plane.len(), self.pixel_count());
        for (dst, &v) in self
            .samples
            .iter_mut()
            .skip(channel)
            .step_by(self.channels)
            .zip(plane)
        {
            *dst = v;
        }
    }

    /// Mean over channels, one value per pixel.
    pub fn luminance(&self) -> Vec<f64> {
        self.samples
            .chunks_exact(self.channels)
            .map(|px| px.iter().sum::<f64>() / self.channels as f64)
            .collect()
    }

    pub fn clamp01(mut self) -> Self {
        for s in &mut self.samples {
            *s = s.clamp(0.0, 1.0);
        }
        self
    }

    pub fn mirror_horizontal(&self) -> Self {
        let mut out = self.clone();
        let (w, ch) = (self.width, self.channels);
        for r in 0..self.height {
            for c in 0..w {
                let src = (r * w + c) * ch;
                let dst = (r * w + (w - 1 - c)) * ch;
                out.samples[dst..dst + ch].copy_from_slice(&self.samples[src..src + ch]);
            }
        }
        out
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        decode_pnm(&bytes)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, encode_pnm(self)).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })
    }
}

pub fn load_image(path: impl AsRef<Path>) -> Result<Image> {
    Image::load(path)
}

pub fn save_image(image: &Image, path: impl AsRef<Path>) -> Result<()> {
    image.save(path)
}

/// Applies `f(channel, sample)` to every sample; channels never mix.
pub fn channel_map(image: &Image, f: impl Fn(usize, f64) -> f64) -> Image {
    let ch = image.channels;
    let samples = image
        .samples
        .iter()
        .enumerate()
        .map(|(i, &s)| f(i % ch, s))
        .collect();
    Image {
        samples,
        ..image.clone()
    }
}

/// Intensity in `[0, 1]` to byte, rounding half away from zero.
#[inline]
pub fn to_byte(sample: f64) -> u8 {
    (sample.clamp(0.0, 1.0) * 255.0).round() as u8
}

#[inline]
pub fn from_byte(byte: u8) -> f64 {
    byte as f64 / 255.0
}

pub fn encode_pnm(image: &Image) -> Vec<u8> {
    let magic = if image.channels == 1 { "P5" } else { "P6" };
    let mut out = format!("{magic}\n{} {}\n255\n", image.width, image.height).into_bytes();
    out.extend(image.samples.iter().map(|&s| to_byte(s)));
    out
}

struct HeaderReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl HeaderReader<'_> {
    fn err(&self, reason: impl Into<String>) -> Error {
        Error::Codec {
            offset: self.pos,
            reason: reason.into(),
        }
    }

    fn skip_whitespace_and_comments(&mut self) {
        while let Some(&b) = self.bytes.get(self.pos) {
            if b == b'#' {
                while let Some(&c) = self.bytes.get(self.pos) {
                    if c == b'\n' || c == b'\r' {
                        break;
                    }
                    self.pos += 1;
                }
            } else if b.is_ascii_whitespace() {
                self.pos += 1;
            } else {
                break;
            }
        }
    }

    fn number(&mut self, what: &str) -> Result<usize> {
        self.skip_whitespace_and_comments();
        let start = self.pos;
        while self.bytes.get(self.pos).is_some_and(u8::is_ascii_digit) {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(self.err(format!("expected {what}")));
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::Codec {
                offset: start,
                reason: format!("{what} does not fit in a machine word"),
            })
    }
}

pub fn decode_pnm(bytes: &[u8]) -> Result<Image> {
    let mut rd = HeaderReader { bytes, pos: 0 };
    let channels = match bytes.get(..2) {
        Some(b"P5") => 1,
        Some(b"P6") => 3,
        _ => return Err(rd.err("expected magic `P5` or `P6`")),
    };
    rd.pos = 2;
    let width = rd.number("width")?;
    let height = rd.number("height")?;
    rd.skip_whitespace_and_comments();
    let maxval_at = rd.pos;
    let maxval = rd.number("maxval")?;
    if maxval != 255 {
        return Err(Error::Codec {
            offset: maxval_at,
            reason: format!("unsupported maxval {maxval}, only 255 is accepted"),
        });
    }
    match bytes.get(rd.pos) {
        Some(b) if b.is_ascii_whitespace() => rd.pos += 1,
        _ => return Err(rd.err("expected a single whitespace byte after maxval")),
    }
    if width == 0 || height == 0 {
        return Err(rd.err(format!("empty image {width}x{height}")));
    }
    let needed = width
        .checked_mul(height)
        .and_then(|n| n.checked_mul(channels))
        .ok_or_else(|| rd.err("image dimensions overflow"))?;
    let payload = &bytes[rd.pos..];
    if payload.len() < needed {
        return Err(Error::Codec {
            offset: bytes.len(),
            reason: format!("truncated payload: {} of {needed} bytes", payload.len()),
        });
    }
    let samples = payload[..needed].iter().map(|&b| from_byte(b)).collect();
    Image::new(width, height, channels, samples)
}

/// Per-pixel boolean annotation, e.g. regions known to be blank paper.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    width: usize,
    height: usize,
    bits: Vec<bool>,
}

impl Mask {
    pub fn new(width: usize, height: usize, bits: Vec<bool>) -> Result<Self> {
        if bits.len() != width * height {
            return Err(Error::Shape(format!(
                "{} mask bits for a {width}x{height} mask",
                bits.len()
            )));
        }
        Ok(Mask {
            width,
            height,
            bits,
        })
    }

    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> bool) -> Self {
        let bits = (0..height)
            .flat_map(|r| (0..width).map(move |c| (c, r)))
            .map(|(c, r)| f(c, r))
            .collect();
        Mask {
            width,
            height,
            bits,
        }
    }

    /// Pixels whose luminance exceeds one half are set.
    pub fn from_image(image: &Image) -> Self {
        let bits = image.luminance().into_iter().map(|v| v > 0.5).collect();
        Mask {
            width: image.width(),
            height: image.height(),
            bits,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn get(&self, col: usize, row: usize) -> bool {
        self.bits[row * self.width + col]
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn mirror_horizontal(&self) -> Self {
        Mask::from_fn(self.width, self.height, |c, r| self.get(self.width - 1 - c, r))
    }
}
