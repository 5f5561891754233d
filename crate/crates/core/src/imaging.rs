//! Raster images, codecs, geometric transforms and overlay rendering.
//!
//! All coordinates follow the `[top, left, bottom, right]` order used by the
//! detector output; top/left are inclusive and bottom/right exclusive.

use std::fmt;
use std::io::Cursor;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ImagingError {
    #[error("malformed image header: {0}")]
    MalformedHeader(String),
    #[error("truncated pixel payload: expected {expected} bytes, found {found}")]
    TruncatedPayload { expected: usize, found: usize },
    #[error("unsupported bit depth: {0}")]
    UnsupportedBitDepth(String),
    #[error("crop box has no area inside the image")]
    EmptyCrop,
    #[error("invalid dimensions {width}x{height} for a buffer of {len} bytes")]
    InvalidDimensions { width: u32, height: u32, len: usize },
    #[error("png codec error: {0}")]
    Png(String),
}

/// Supported on-disk encodings.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ImageFormat {
    PpmP6,
    Png,
}

impl ImageFormat {
    /// Guess the format from a file name extension.
    pub fn from_extension(ext: &str) -> Option<Self> {
        match ext.to_ascii_lowercase().as_str() {
            "ppm" | "pnm" => Some(ImageFormat::PpmP6),
            "png" => Some(ImageFormat::Png),
            _ => None,
        }
    }

    /// Sniff the format from leading magic bytes.
    pub fn sniff(bytes: &[u8]) -> Option<Self> {
        if bytes.starts_with(b"P6") {
            Some(ImageFormat::PpmP6)
        } else if bytes.starts_with(&[0x89, b'P', b'N', b'G']) {
            Some(ImageFormat::Png)
        } else {
            None
        }
    }
}

/// Decoded 8-bit RGB image, row-major.
#[derive(Clone, PartialEq, Eq)]
pub struct RasterImage {
    width: u32,
    height: u32,
    pixels: Vec<u8>,
}

impl fmt::Debug for RasterImage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("RasterImage")
            .field("width", &self.width)
            .field("height", &self.height)
            .finish_non_exhaustive()
    }
}

impl RasterImage {
    pub fn from_raw(width: u32, height: u32, pixels: Vec<u8>) -> Result<Self, ImagingError> {
        let expected = (width as usize) * (height as usize) * 3;
        if width == 0 || height == 0 || pixels.len() != expected {
            return Err(ImagingError::InvalidDimensions {
                width,
                height,
                len: pixels.len(),
            });
        }
        Ok(RasterImage {
            width,
            height,
            pixels,
        })
    }

    /// Image filled with one color. Panics on zero dimensions.
    pub fn filled(width: u32, height: u32, rgb: [u8; 3]) -> Self {
        assert!(width > 0 && height > 0, "image dimensions must be positive");
        let mut pixels = Vec::with_capacity(width as usize * height as usize * 3);
        for _ in 0..(width as usize * height as usize) {
            pixels.extend_from_slice(&rgb);
        }
        RasterImage {
            width,
            height,
            pixels,
        }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn into_pixels(self) -> Vec<u8> {
        self.pixels
    }

    pub fn pixel(&self, x: u32, y: u32) -> [u8; 3] {
        let i = self.offset(x, y);
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }

    pub fn set_pixel(&mut self, x: u32, y: u32, rgb: [u8; 3]) {
        let i = self.offset(x, y);
        self.pixels[i..i + 3].copy_from_slice(&rgb);
    }

    pub fn rgb_pixels(&self) -> impl Iterator<Item = [u8; 3]> + '_ {
        self.pixels.chunks_exact(3).map(|p| [p[0], p[1], p[2]])
    }

    /// Box covering the whole image.
    pub fn full_box(&self) -> PixelBox {
        PixelBox::new(0, 0, self.height as i32, self.width as i32)
    }

    #[inline]
    fn offset(&self, x: u32, y: u32) -> usize {
        debug_assert!(x < self.width && y < self.height);
        (y as usize * self.width as usize + x as usize) * 3
    }
}

/// Integer pixel box, `[top, left, bottom, right]`, half-open.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(into = "[i32; 4]", from = "[i32; 4]")]
pub struct PixelBox {
    pub top: i32,
    pub left: i32,
    pub bottom: i32,
    pub right: i32,
}

impl From<PixelBox> for [i32; 4] {
    fn from(b: PixelBox) -> Self {
        [b.top, b.left, b.bottom, b.right]
    }
}

impl From<[i32; 4]> for PixelBox {
    fn from(a: [i32; 4]) -> Self {
        PixelBox::new(a[0], a[1], a[2], a[3])
    }
}

impl PixelBox {
    pub const fn new(top: i32, left: i32, bottom: i32, right: i32) -> Self {
        PixelBox {
            top,
            left,
            bottom,
            right,
        }
    }

    pub fn width(&self) -> i32 {
        (self.right - self.left).max(0)
    }

    pub fn height(&self) -> i32 {
        (self.bottom - self.top).max(0)
    }

    pub fn area(&self) -> i64 {
        self.width() as i64 * self.height() as i64
    }

    /// Intersect with `[0, width) x [0, height)`.
    pub fn clamp_to(&self, width: u32, height: u32) -> PixelBox {
        let (w, h) = (width as i32, height as i32);
        PixelBox {
            top: self.top.clamp(0, h),
            left: self.left.clamp(0, w),
            bottom: self.bottom.clamp(0, h),
            right: self.right.clamp(0, w),
        }
    }

    pub fn is_bound_valid(&self, width: u32, height: u32) -> bool {
        0 <= self.left
            && self.left < self.right
            && self.right <= width as i32
            && 0 <= self.top
            && self.top < self.bottom
            && self.bottom <= height as i32
    }

    pub fn translate(&self, dy: i32, dx: i32) -> PixelBox {
        PixelBox::new(self.top + dy, self.left + dx, self.bottom + dy, self.right + dx)
    }
}

// ---------------------------------------------------------------------------
// Codecs

pub fn decode_image(bytes: &[u8], format: ImageFormat) -> Result<RasterImage, ImagingError> {
    match format {
        ImageFormat::PpmP6 => decode_ppm(bytes),
        ImageFormat::Png => decode_png(bytes),
    }
}

/// Decode by sniffing the magic bytes.
pub fn decode_any(bytes: &[u8]) -> Result<RasterImage, ImagingError> {
    match ImageFormat::sniff(bytes) {
        Some(fmt) => decode_image(bytes, fmt),
        None => Err(ImagingError::MalformedHeader(
            "unrecognised image signature".into(),
        )),
    }
}

pub fn encode_image(img: &RasterImage, format: ImageFormat) -> Vec<u8> {
    match format {
        ImageFormat::PpmP6 => encode_ppm(img),
        ImageFormat::Png => encode_png(img),
    }
}

fn decode_ppm(bytes: &[u8]) -> Result<RasterImage, ImagingError> {
    if bytes.len() < 2 || &bytes[..2] != b"P6" {
        return Err(ImagingError::MalformedHeader("missing P6 magic".into()));
    }
    let mut pos = 2;
    let mut fields = [0u64; 3];
    for (i, field) in fields.iter_mut().enumerate() {
        // Whitespace and comments may precede each header token.
        loop {
            match bytes.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while let Some(&b) = bytes.get(pos) {
                        pos += 1;
                        if b == b'\n' || b == b'\r' {
                            break;
                        }
                    }
                }
                Some(_) => break,
                None => {
                    return Err(ImagingError::MalformedHeader(format!(
                        "header ends before field {i}"
                    )))
                }
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        if start == pos {
            return Err(ImagingError::MalformedHeader(format!(
                "expected a decimal number for field {i}"
            )));
        }
        let text = std::str::from_utf8(&bytes[start..pos]).expect("ascii digits");
        *field = text
            .parse()
            .map_err(|_| ImagingError::MalformedHeader(format!("number out of range: {text}")))?;
    }
    // Exactly one whitespace byte separates maxval from the raster.
    match bytes.get(pos) {
        Some(b) if b.is_ascii_whitespace() => pos += 1,
        _ => {
            return Err(ImagingError::MalformedHeader(
                "missing whitespace after maxval".into(),
            ))
        }
    }
    let [width, height, maxval] = fields;
    if width == 0 || height == 0 || width > u32::MAX as u64 || height > u32::MAX as u64 {
        return Err(ImagingError::MalformedHeader(format!(
            "bad dimensions {width}x{height}"
        )));
    }
    if maxval != 255 {
        return Err(ImagingError::UnsupportedBitDepth(format!("maxval {maxval}")));
    }
    let expected = (width as usize)
        .checked_mul(height as usize)
        .and_then(|n| n.checked_mul(3))
        .ok_or_else(|| ImagingError::MalformedHeader("dimensions overflow".into()))?;
    let payload = &bytes[pos..];
    if payload.len() < expected {
        return Err(ImagingError::TruncatedPayload {
            expected,
            found: payload.len(),
        });
    }
    RasterImage::from_raw(width as u32, height as u32, payload[..expected].to_vec())
}

fn encode_ppm(img: &RasterImage) -> Vec<u8> {
    let mut out = format!("P6\n{} {}\n255\n", img.width, img.height).into_bytes();
    out.extend_from_slice(&img.pixels);
    out
}

fn decode_png(bytes: &[u8]) -> Result<RasterImage, ImagingError> {
    let mut decoder = png::Decoder::new(Cursor::new(bytes));
    decoder.set_transformations(png::Transformations::EXPAND);
    let mut reader = decoder.read_info().map_err(|e| match e {
        png::DecodingError::Format(_) | png::DecodingError::Parameter(_) => {
            ImagingError::MalformedHeader(e.to_string())
        }
        png::DecodingError::IoError(_) => ImagingError::TruncatedPayload {
            expected: 0,
            found: bytes.len(),
        },
        other => ImagingError::Png(other.to_string()),
    })?;
    let size = reader.output_buffer_size().ok_or_else(|| {
        ImagingError::MalformedHeader("png output buffer size overflows".into())
    })?;
    let mut buf = vec![0u8; size];
    let info = reader.next_frame(&mut buf).map_err(|e| match e {
        png::DecodingError::IoError(_) => ImagingError::TruncatedPayload {
            expected: size,
            found: bytes.len(),
        },
        other => ImagingError::Png(other.to_string()),
    })?;
    if info.bit_depth != png::BitDepth::Eight {
        return Err(ImagingError::UnsupportedBitDepth(format!(
            "{:?}",
            info.bit_depth
        )));
    }
    buf.truncate(info.buffer_size());
    let (w, h) = (info.width, info.height);
    let pixels: Vec<u8> = match info.color_type {
        png::ColorType::Rgb => buf,
        png::ColorType::Rgba => buf
            .chunks_exact(4)
            .flat_map(|p| [p[0], p[1], p[2]])
            .collect(),
        png::ColorType::Grayscale => buf.iter().flat_map(|&g| [g, g, g]).collect(),
        png::ColorType::GrayscaleAlpha => buf
            .chunks_exact(2)
            .flat_map(|p| [p[0], p[0], p[0]])
            .collect(),
        png::ColorType::Indexed => {
            return Err(ImagingError::Png("palette was not expanded".into()))
        }
    };
    RasterImage::from_raw(w, h, pixels)
}

fn encode_png(img: &RasterImage) -> Vec<u8> {
    let mut out = Vec::new();
    {
        let mut encoder = png::Encoder::new(&mut out, img.width, img.height);
        encoder.set_color(png::ColorType::Rgb);
        encoder.set_depth(png::BitDepth::Eight);
        let mut writer = encoder
            .write_header()
            .expect("writing a png header to memory cannot fail");
        writer
            .write_image_data(&img.pixels)
            .expect("buffer length matches the declared dimensions");
    }
    out
}

// ---------------------------------------------------------------------------
// Geometry

/// Bilinear resize with half-pixel centres. Aspect ratio is not preserved.
pub fn resize(img: &RasterImage, out_w: u32, out_h: u32) -> RasterImage {
    assert!(out_w > 0 && out_h > 0, "output dimensions must be positive");
    if out_w == img.width && out_h == img.height {
        return img.clone();
    }
    let xs = sample_positions(img.width, out_w);
    let ys = sample_positions(img.height, out_h);
    let src_stride = img.width as usize * 3;
    let mut out = Vec::with_capacity(out_w as usize * out_h as usize * 3);
    for &(y0, y1, fy) in &ys {
        let row0 = &img.pixels[y0 * src_stride..(y0 + 1) * src_stride];
        let row1 = &img.pixels[y1 * src_stride..(y1 + 1) * src_stride];
        for &(x0, x1, fx) in &xs {
            for c in 0..3 {
                let p00 = row0[x0 * 3 + c] as f32;
                let p01 = row0[x1 * 3 + c] as f32;
                let p10 = row1[x0 * 3 + c] as f32;
                let p11 = row1[x1 * 3 + c] as f32;
                let top = p00 + (p01 - p00) * fx;
                let bottom = p10 + (p11 - p10) * fx;
                let v = top + (bottom - top) * fy;
                out.push(v.round().clamp(0.0, 255.0) as u8);
            }
        }
    }
    RasterImage {
        width: out_w,
        height: out_h,
        pixels: out,
    }
}

/// For each destination index: (lower source index, upper source index, weight of upper).
fn sample_positions(src_len: u32, dst_len: u32) -> Vec<(usize, usize, f32)> {
    let scale = src_len as f64 / dst_len as f64;
    let max = (src_len - 1) as f64;
    (0..dst_len)
        .map(|d| {
            let s = ((d as f64 + 0.5) * scale - 0.5).clamp(0.0, max);
            let lo = s.floor();
            let hi = (lo + 1.0).min(max);
            (lo as usize, hi as usize, (s - lo) as f32)
        })
        .collect()
}

/// Copy the pixels inside `bbox` after clamping it to the image.
pub fn crop(img: &RasterImage, bbox: PixelBox) -> Result<RasterImage, ImagingError> {
    let b = bbox.clamp_to(img.width, img.height);
    if b.area() == 0 {
        return Err(ImagingError::EmptyCrop);
    }
    let (w, h) = (b.width() as usize, b.height() as usize);
    let stride = img.width as usize * 3;
    let mut pixels = Vec::with_capacity(w * h * 3);
    for y in b.top as usize..b.bottom as usize {
        let start = y * stride + b.left as usize * 3;
        pixels.extend_from_slice(&img.pixels[start..start + w * 3]);
    }
    Ok(RasterImage {
        width: w as u32,
        height: h as u32,
        pixels,
    })
}

// ---------------------------------------------------------------------------
// Color

/// Hue in degrees `[0, 360)`, saturation and value in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hsv {
    pub h: f64,
    pub s: f64,
    pub v: f64,
}

/// Hexcone RGB to HSV. Achromatic pixels get hue 0.
pub fn rgb_to_hsv(rgb: [u8; 3]) -> Hsv {
    let [r, g, b] = rgb.map(|c| c as f64 / 255.0);
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let delta = max - min;
    let h = if delta == 0.0 {
        0.0
    } else if max == r {
        60.0 * ((g - b) / delta).rem_euclid(6.0)
    } else if max == g {
        60.0 * ((b - r) / delta + 2.0)
    } else {
        60.0 * ((r - g) / delta + 4.0)
    };
    let s = if max == 0.0 { 0.0 } else { delta / max };
    Hsv { h, s, v: max }
}

/// Rec. 601 luma, 0-255.
pub fn luminance(rgb: [u8; 3]) -> f64 {
    0.299 * rgb[0] as f64 + 0.587 * rgb[1] as f64 + 0.114 * rgb[2] as f64
}

// ---------------------------------------------------------------------------
// Overlay

/// Label drawn next to a box; picks the outline color.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum OverlayLabel {
    Rbc,
    Wbc,
    Platelet,
    Malaria,
}

impl OverlayLabel {
    pub fn text(self) -> &'static str {
        match self {
            OverlayLabel::Rbc => "RBC",
            OverlayLabel::Wbc => "WBC",
            OverlayLabel::Platelet => "PLATELET",
            OverlayLabel::Malaria => "MALARIA",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OverlayStyle {
    pub rbc: [u8; 3],
    pub wbc: [u8; 3],
    pub platelet: [u8; 3],
    pub malaria: [u8; 3],
    pub thickness: u32,
    pub label_text: bool,
}

impl Default for OverlayStyle {
    fn default() -> Self {
        OverlayStyle {
            rbc: [0, 200, 0],
            wbc: [220, 20, 20],
            platelet: [138, 43, 226],
            malaria: [128, 0, 128],
            thickness: 2,
            label_text: false,
        }
    }
}

impl OverlayStyle {
    pub fn color(&self, label: OverlayLabel) -> [u8; 3] {
        match label {
            OverlayLabel::Rbc => self.rbc,
            OverlayLabel::Wbc => self.wbc,
            OverlayLabel::Platelet => self.platelet,
            OverlayLabel::Malaria => self.malaria,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OverlayBox {
    pub bbox: PixelBox,
    pub label: OverlayLabel,
    pub score: f64,
}

/// Draw box outlines (inside the box edge, `thickness` px deep) on a copy of `img`.
///
/// Boxes are painted lowest score first so the most confident outline wins
/// where rings overlap.
pub fn render_overlay(img: &RasterImage, boxes: &[OverlayBox], style: &OverlayStyle) -> RasterImage {
    let mut out = img.clone();
    let mut order: Vec<&OverlayBox> = boxes.iter().collect();
    order.sort_by(|a, b| a.score.total_cmp(&b.score));
    for ob in order {
        let b = ob.bbox.clamp_to(img.width, img.height);
        if b.area() == 0 {
            continue;
        }
        let color = style.color(ob.label);
        let t = style.thickness as i32;
        for y in b.top..b.bottom {
            for x in b.left..b.right {
                let on_ring = y < b.top + t || y >= b.bottom - t || x < b.left + t || x >= b.right - t;
                if on_ring {
                    out.set_pixel(x as u32, y as u32, color);
                }
            }
        }
        if style.label_text {
            draw_label(&mut out, &b, ob, color);
        }
    }
    out
}

fn draw_label(img: &mut RasterImage, b: &PixelBox, ob: &OverlayBox, color: [u8; 3]) {
    let text = format!("{} {}%", ob.label.text(), (ob.score * 100.0).round() as i64);
    let text_h = font::GLYPH_H as i32;
    // Labels live outside the box so the interior stays untouched.
    let y = if b.top - text_h > 0 {
        b.top - text_h - 1
    } else if b.bottom + 1 + text_h <= img.height as i32 {
        b.bottom + 1
    } else {
        return;
    };
    font::draw_text(img, b.left, y, &text, color);
}

mod font {
    //! 3x5 bitmap glyphs for overlay captions.
    use super::RasterImage;

    pub const GLYPH_W: usize = 3;
    pub const GLYPH_H: usize = 5;

    fn glyph(c: char) -> [u8; GLYPH_H] {
        // Each row is 3 bits, MSB on the left.
        match c {
            'A' => [0b010, 0b101, 0b111, 0b101, 0b101],
            'B' => [0b110, 0b101, 0b110, 0b101, 0b110],
            'C' => [0b011, 0b100, 0b100, 0b100, 0b011],
            'E' => [0b111, 0b100, 0b110, 0b100, 0b111],
            'I' => [0b111, 0b010, 0b010, 0b010, 0b111],
            'L' => [0b100, 0b100, 0b100, 0b100, 0b111],
            'M' => [0b101, 0b111, 0b111, 0b101, 0b101],
            'P' => [0b110, 0b101, 0b110, 0b100, 0b100],
            'R' => [0b110, 0b101, 0b110, 0b101, 0b101],
            'T' => [0b111, 0b010, 0b010, 0b010, 0b010],
            'W' => [0b101, 0b101, 0b111, 0b111, 0b101],
            '0' => [0b111, 0b101, 0b101, 0b101, 0b111],
            '1' => [0b010, 0b110, 0b010, 0b010, 0b111],
            '2' => [0b110, 0b001, 0b010, 0b100, 0b111],
            '3' => [0b110, 0b001, 0b010, 0b001, 0b110],
            '4' => [0b101, 0b101, 0b111, 0b001, 0b001],
            '5' => [0b111, 0b100, 0b110, 0b001, 0b110],
            '6' => [0b011, 0b100, 0b111, 0b101, 0b111],
            '7' => [0b111, 0b001, 0b010, 0b010, 0b010],
            '8' => [0b111, 0b101, 0b111, 0b101, 0b111],
            '9' => [0b111, 0b101, 0b111, 0b001, 0b110],
            '%' => [0b101, 0b001, 0b010, 0b100, 0b101],
            _ => [0; GLYPH_H],
        }
    }

    pub fn draw_text(img: &mut RasterImage, x0: i32, y0: i32, text: &str, color: [u8; 3]) {
        let (w, h) = (img.width() as i32, img.height() as i32);
        for (i, c) in text.chars().enumerate() {
            let rows = glyph(c);
            let gx = x0 + (i * (GLYPH_W + 1)) as i32;
            for (dy, row) in rows.iter().enumerate() {
                for dx in 0..GLYPH_W {
                    if row & (1 << (GLYPH_W - 1 - dx)) == 0 {
                        continue;
                    }
                    let (x, y) = (gx + dx as i32, y0 + dy as i32);
                    if (0..w).contains(&x) && (0..h).contains(&y) {
                        img.set_pixel(x as u32, y as u32, color);
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn numbered(w: u32, h: u32) -> RasterImage {
        let pixels = (0..w * h)
            .flat_map(|i| [i as u8, (i * 7) as u8, (i * 13) as u8])
            .collect();
        RasterImage::from_raw(w, h, pixels).unwrap()
    }

    #[test]
    fn ppm_decode_two_pixels() {
        let mut bytes = b"P6 2 1 255\n".to_vec();
        bytes.extend_from_slice(&[255, 0, 0, 0, 255, 0]);
        let img = decode_image(&bytes, ImageFormat::PpmP6).unwrap();
        assert_eq!((img.width(), img.height()), (2, 1));
        assert_eq!(img.pixel(0, 0), [255, 0, 0]);
        assert_eq!(img.pixel(1, 0), [0, 255, 0]);
        let encoded = encode_image(&img, ImageFormat::PpmP6);
        assert!(encoded.ends_with(&[255, 0, 0, 0, 255, 0]));
        assert_eq!(&encoded[encoded.len() - 6..], &[255, 0, 0, 0, 255, 0]);
    }

    #[test]
    fn ppm_header_comments_and_errors() {
        let mut bytes = b"P6\n# made by hand\n1 1\n# depth\n255\n".to_vec();
        bytes.extend_from_slice(&[1, 2, 3]);
        assert_eq!(decode_any(&bytes).unwrap().pixel(0, 0), [1, 2, 3]);

        assert!(matches!(
            decode_image(&[], ImageFormat::PpmP6),
            Err(ImagingError::MalformedHeader(_))
        ));
        let mut short = b"P6 2 2 255\n".to_vec();
        short.extend_from_slice(&[0; 6]);
        assert!(matches!(
            decode_image(&short, ImageFormat::PpmP6),
            Err(ImagingError::TruncatedPayload { expected: 12, found: 6 })
        ));
        let deep = b"P6 1 1 65535\n\0\0\0\0\0\0";
        assert!(matches!(
            decode_image(deep, ImageFormat::PpmP6),
            Err(ImagingError::UnsupportedBitDepth(_))
        ));
        assert!(matches!(
            decode_image(b"P6 x 1 255\n", ImageFormat::PpmP6),
            Err(ImagingError::MalformedHeader(_))
        ));
    }

    #[test]
    fn ppm_encode_black_pixel() {
        let img = RasterImage::filled(1, 1, [0, 0, 0]);
        assert_eq!(encode_image(&img, ImageFormat::PpmP6), b"P6\n1 1\n255\n\x00\x00\x00");
    }

    #[test]
    fn png_rejects_garbage() {
        assert!(decode_image(b"not a png", ImageFormat::Png).is_err());
        let good = encode_image(&numbered(5, 4), ImageFormat::Png);
        assert!(decode_image(&good[..good.len() / 2], ImageFormat::Png).is_err());
    }

    #[test]
    fn resize_dimensions_and_identity() {
        let img = numbered(640, 480);
        let small = resize(&img, 320, 320);
        assert_eq!((small.width(), small.height()), (320, 320));
        assert_eq!(resize(&img, 640, 480), img);
    }

    #[test]
    fn resize_constant_field() {
        let gray = RasterImage::filled(100, 100, [128, 128, 128]);
        let big = resize(&gray, 320, 320);
        assert!(big.rgb_pixels().all(|p| p == [128, 128, 128]));
    }

    #[test]
    fn resize_upscale_interpolates_midpoint() {
        // 2x1 -> 4x1: centres at source x = -0.25 (clamped 0), 0.25, 0.75, 1.25 (clamped 1).
        let img = RasterImage::from_raw(2, 1, vec![0, 0, 0, 200, 200, 200]).unwrap();
        let out = resize(&img, 4, 1);
        let row: Vec<u8> = out.rgb_pixels().map(|p| p[0]).collect();
        assert_eq!(row, vec![0, 50, 150, 200]);
    }

    #[test]
    fn crop_cases() {
        let img = numbered(4, 4);
        assert_eq!(crop(&img, img.full_box()).unwrap(), img);
        let sub = crop(&img, PixelBox::new(1, 1, 3, 3)).unwrap();
        assert_eq!((sub.width(), sub.height()), (2, 2));
        for (y, x) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
            assert_eq!(sub.pixel(x, y), img.pixel(x + 1, y + 1));
        }
        // Index 5 is (x=1,y=1) in the numbered pattern.
        assert_eq!(sub.pixel(0, 0), [5, 35, 65]);
        assert_eq!(
            crop(&img, PixelBox::new(10, 10, 20, 20)),
            Err(ImagingError::EmptyCrop)
        );
        let clamped = crop(&img, PixelBox::new(-5, 2, 2, 99)).unwrap();
        assert_eq!((clamped.width(), clamped.height()), (2, 2));
    }

    #[test]
    fn hsv_reference_values() {
        let red = rgb_to_hsv([255, 0, 0]);
        assert_eq!((red.h, red.s, red.v), (0.0, 1.0, 1.0));
        let black = rgb_to_hsv([0, 0, 0]);
        assert_eq!((black.h, black.s, black.v), (0.0, 0.0, 0.0));
        let purple = rgb_to_hsv([128, 0, 128]);
        assert!((purple.h - 300.0).abs() < 1e-9);
        assert!((purple.s - 1.0).abs() < 1e-12);
        assert!((purple.v - 128.0 / 255.0).abs() < 1e-12);
    }

    /// Textbook HSV -> RGB, used only to check the forward conversion.
    fn hsv_to_rgb_oracle(hsv: Hsv) -> [u8; 3] {
        let c = hsv.v * hsv.s;
        let hp = hsv.h / 60.0;
        let x = c * (1.0 - (hp % 2.0 - 1.0).abs());
        let (r, g, b) = match hp as u32 {
            0 => (c, x, 0.0),
            1 => (x, c, 0.0),
            2 => (0.0, c, x),
            3 => (0.0, x, c),
            4 => (x, 0.0, c),
            _ => (c, 0.0, x),
        };
        let m = hsv.v - c;
        [r, g, b].map(|ch| ((ch + m) * 255.0).round() as u8)
    }

    #[test]
    fn overlay_empty_is_copy() {
        let img = numbered(8, 8);
        assert_eq!(render_overlay(&img, &[], &OverlayStyle::default()), img);
    }

    #[test]
    fn overlay_ring_pixel_count() {
        let white = RasterImage::filled(40, 30, [255, 255, 255]);
        let style = OverlayStyle::default();
        let bbox = PixelBox::new(5, 6, 25, 30); // 24 wide, 20 tall
        let out = render_overlay(
            &white,
            &[OverlayBox { bbox, label: OverlayLabel::Malaria, score: 0.9 }],
            &style,
        );
        let changed = white
            .rgb_pixels()
            .zip(out.rgb_pixels())
            .filter(|(a, b)| a != b)
            .count();
        // Perimeter ring t deep: w*h - (w-2t)*(h-2t) = 480 - 20*16.
        assert_eq!(changed, 480 - 20 * 16);
        assert_eq!(out.pixel(6, 5), style.malaria);
        assert_eq!(out.pixel(8, 7), [255, 255, 255]);
        assert_eq!(out.pixel(5, 5), [255, 255, 255]);
    }

    #[test]
    fn overlay_label_only_changes_color() {
        let white = RasterImage::filled(20, 20, [255, 255, 255]);
        let style = OverlayStyle::default();
        assert_ne!(style.malaria, style.platelet);
        let bbox = PixelBox::new(2, 2, 12, 12);
        let a = render_overlay(&white, &[OverlayBox { bbox, label: OverlayLabel::Rbc, score: 0.5 }], &style);
        let b = render_overlay(&white, &[OverlayBox { bbox, label: OverlayLabel::Malaria, score: 0.5 }], &style);
        for (pa, pb) in a.rgb_pixels().zip(b.rgb_pixels()) {
            if pa != pb {
                assert_eq!(pa, style.rbc);
                assert_eq!(pb, style.malaria);
            }
        }
        assert_ne!(a, b);
    }

    #[test]
    fn overlay_highest_score_on_top() {
        let white = RasterImage::filled(20, 20, [255, 255, 255]);
        let style = OverlayStyle::default();
        let bbox = PixelBox::new(2, 2, 12, 12);
        let boxes = [
            OverlayBox { bbox, label: OverlayLabel::Malaria, score: 0.95 },
            OverlayBox { bbox, label: OverlayLabel::Rbc, score: 0.3 },
        ];
        let out = render_overlay(&white, &boxes, &style);
        assert_eq!(out.pixel(2, 2), style.malaria);
    }

    #[test]
    fn overlay_caption_stays_outside_box() {
        let white = RasterImage::filled(60, 60, [255, 255, 255]);
        let style = OverlayStyle { label_text: true, ..OverlayStyle::default() };
        let bbox = PixelBox::new(20, 10, 40, 50);
        let out = render_overlay(&white, &[OverlayBox { bbox, label: OverlayLabel::Rbc, score: 0.87 }], &style);
        let above = (0..20u32).flat_map(|y| (0..60u32).map(move |x| (x, y)));
        assert!(above.into_iter().any(|(x, y)| out.pixel(x, y) != [255, 255, 255]));
        for y in 22..38 {
            for x in 12..48 {
                assert_eq!(out.pixel(x, y), [255, 255, 255]);
            }
        }
    }

    fn arb_image() -> impl Strategy<Value = RasterImage> {
        (1u32..12, 1u32..12).prop_flat_map(|(w, h)| {
            proptest::collection::vec(any::<u8>(), (w * h * 3) as usize)
                .prop_map(move |px| RasterImage::from_raw(w, h, px).unwrap())
        })
    }

    proptest! {
        #[test]
        fn codecs_round_trip(img in arb_image()) {
            for fmt in [ImageFormat::PpmP6, ImageFormat::Png] {
                let back = decode_image(&encode_image(&img, fmt), fmt).unwrap();
                prop_assert_eq!(&back, &img);
            }
        }

        #[test]
        fn crop_composes(img in arb_image(), a in any::<[u16; 4]>(), b in any::<[u16; 4]>()) {
            // Pick a nested pair of in-range boxes from raw fractions.
            let pick = |w: u32, h: u32, r: [u16; 4]| {
                let top = (r[0] as u32 % h) as i32;
                let left = (r[1] as u32 % w) as i32;
                let bottom = top + 1 + (r[2] as u32 % (h - top as u32)) as i32;
                let right = left + 1 + (r[3] as u32 % (w - left as u32)) as i32;
                PixelBox::new(top, left, bottom, right)
            };
            let outer = pick(img.width(), img.height(), a);
            let inner = pick(outer.width() as u32, outer.height() as u32, b);
            let nested = crop(&crop(&img, outer).unwrap(), inner).unwrap();
            let direct = crop(&img, inner.translate(outer.top, outer.left)).unwrap();
            prop_assert_eq!(nested, direct);
        }

        #[test]
        fn resize_is_dimension_exact(img in arb_image(), w in 1u32..40, h in 1u32..40) {
            let out = resize(&img, w, h);
            prop_assert_eq!((out.width(), out.height()), (w, h));
            prop_assert_eq!(out.pixels().len(), (w * h * 3) as usize);
        }

        #[test]
        fn hsv_round_trips_within_one(r in any::<u8>(), g in any::<u8>(), b in any::<u8>()) {
            let back = hsv_to_rgb_oracle(rgb_to_hsv([r, g, b]));
            for (x, y) in [r, g, b].iter().zip(back.iter()) {
                prop_assert!((*x as i32 - *y as i32).abs() <= 1);
            }
        }

        #[test]
        fn overlay_leaves_interior(img in arb_image(), t in 1u32..3) {
            prop_assume!(img.width() > 2 * t && img.height() > 2 * t);
            let style = OverlayStyle { thickness: t, ..OverlayStyle::default() };
            let bbox = img.full_box();
            let out = render_overlay(&img, &[OverlayBox { bbox, label: OverlayLabel::Wbc, score: 1.0 }], &style);
            for y in t..img.height() - t {
                for x in t..img.width() - t {
                    prop_assert_eq!(out.pixel(x, y), img.pixel(x, y));
                }
            }
        }
    }
}
