//! Grayscale images: binary PGM codec and the geometric primitives used by
//! augmentation (bilinear resize, crop, horizontal flip).
//!
//! Intensities are held as reals in `[0, 1]` from the moment they are decoded.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

/// A single-channel image with row-major intensities in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl GrayImage {
    /// Builds an image from row-major data. Values are clamped into `[0, 1]`.
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::ShapeMismatch(format!(
                "{} values for a {width}x{height} image",
                data.len()
            )));
        }
        let data = data.into_iter().map(|v| v.clamp(0.0, 1.0)).collect();
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, value: f64) -> Self {
        Self {
            width,
            height,
            data: vec![value.clamp(0.0, 1.0); width * height],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }
}

fn is_pnm_space(b: u8) -> bool {
    matches!(b, b' ' | b'\t' | b'\n' | b'\r' | 0x0b | 0x0c)
}

/// Reads one whitespace-delimited header token, skipping `#` comments.
fn header_token<'a>(bytes: &'a [u8], pos: &mut usize) -> Result<&'a [u8]> {
    loop {
        while *pos < bytes.len() && is_pnm_space(bytes[*pos]) {
            *pos += 1;
        }
        if *pos < bytes.len() && bytes[*pos] == b'#' {
            while *pos < bytes.len() && bytes[*pos] != b'\n' {
                *pos += 1;
            }
            continue;
        }
        break;
    }
    let start = *pos;
    while *pos < bytes.len() && !is_pnm_space(bytes[*pos]) && bytes[*pos] != b'#' {
        *pos += 1;
    }
    if start == *pos {
        return Err(Error::MalformedHeader("unexpected end of header".into()));
    }
    Ok(&bytes[start..*pos])
}

fn header_number(bytes: &[u8], pos: &mut usize, what: &str) -> Result<u32> {
    let tok = header_token(bytes, pos)?;
    std::str::from_utf8(tok)
        .ok()
        .and_then(|s| s.parse::<u32>().ok())
        .ok_or_else(|| Error::MalformedHeader(format!("bad {what}")))
}

/// Decodes a binary (P5) PGM with maxval 255.
pub fn decode_pgm(bytes: &[u8]) -> Result<GrayImage> {
    if bytes.len() < 2 || &bytes[..2] != b"P5" {
        return Err(Error::MalformedHeader("expected magic number P5".into()));
    }
    let mut pos = 2;
    if pos >= bytes.len() || !is_pnm_space(bytes[pos]) {
        return Err(Error::MalformedHeader(
            "missing whitespace after magic".into(),
        ));
    }
    let width = header_number(bytes, &mut pos, "width")? as usize;
    let height = header_number(bytes, &mut pos, "height")? as usize;
    let maxval = header_number(bytes, &mut pos, "maxval")?;
    if width == 0 || height == 0 {
        return Err(Error::MalformedHeader("zero dimension".into()));
    }
    if maxval != 255 {
        return Err(Error::UnsupportedMaxval(maxval));
    }
    // exactly one whitespace byte separates the header from the raster
    if pos >= bytes.len() || !is_pnm_space(bytes[pos]) {
        return Err(Error::TruncatedData {
            expected: width * height,
            found: 0,
        });
    }
    pos += 1;
    let raster = &bytes[pos..];
    let expected = width * height;
    if raster.len() < expected {
        return Err(Error::TruncatedData {
            expected,
            found: raster.len(),
        });
    }
    let data = raster[..expected]
        .iter()
        .map(|&b| f64::from(b) / 255.0)
        .collect();
    Ok(GrayImage {
        width,
        height,
        data,
    })
}

/// Quantizes an intensity to 8 bits, rounding half up.
#[inline]
pub fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0 + 0.5).floor() as u8
}

/// Encodes as binary P5 PGM, maxval 255.
pub fn encode_pgm(img: &GrayImage) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", img.width, img.height).into_bytes();
    out.extend(img.data.iter().map(|&v| quantize(v)));
    out
}

pub fn read_pgm(path: impl AsRef<Path>) -> Result<GrayImage> {
    decode_pgm(&fs::read(path)?)
}

pub fn write_pgm(path: impl AsRef<Path>, img: &GrayImage) -> Result<()> {
    fs::write(path, encode_pgm(img))?;
    Ok(())
}

/// Bilinear resize with half-pixel-centre alignment: output pixel `i` samples
/// source coordinate `(i + 0.5) * in / out - 0.5`, clamped to the image.
pub fn resize_bilinear(img: &GrayImage, out_w: usize, out_h: usize) -> Result<GrayImage> {
    if out_w == 0 || out_h == 0 {
        return Err(Error::ZeroDimension);
    }
    if img.is_empty() {
        return Err(Error::EmptyImage);
    }
    if out_w == img.width && out_h == img.height {
        return Ok(img.clone());
    }
    let xs = sample_positions(img.width, out_w);
    let ys = sample_positions(img.height, out_h);
    let mut data = Vec::with_capacity(out_w * out_h);
    for &(y0, y1, fy) in &ys {
        for &(x0, x1, fx) in &xs {
            let top = img.get(x0, y0) * (1.0 - fx) + img.get(x1, y0) * fx;
            let bot = img.get(x0, y1) * (1.0 - fx) + img.get(x1, y1) * fx;
            data.push((top * (1.0 - fy) + bot * fy).clamp(0.0, 1.0));
        }
    }
    Ok(GrayImage {
        width: out_w,
        height: out_h,
        data,
    })
}

/// For each output index: (lower source index, upper source index, weight of upper).
fn sample_positions(n_in: usize, n_out: usize) -> Vec<(usize, usize, f64)> {
    let scale = n_in as f64 / n_out as f64;
    let last = (n_in - 1) as f64;
    (0..n_out)
        .map(|i| {
            let src = ((i as f64 + 0.5) * scale - 0.5).clamp(0.0, last);
            let lo = src.floor();
            let frac = src - lo;
            let lo = lo as usize;
            let hi = (lo + 1).min(n_in - 1);
            (lo, hi, frac)
        })
        .collect()
}

/// Copies the `w`x`h` rectangle whose top-left corner is `(x0, y0)`.
pub fn crop(img: &GrayImage, x0: usize, y0: usize, w: usize, h: usize) -> Result<GrayImage> {
    if w == 0 || h == 0 || x0 + w > img.width || y0 + h > img.height {
        return Err(Error::OutOfBounds {
            x0,
            y0,
            w,
            h,
            width: img.width,
            height: img.height,
        });
    }
    let mut data = Vec::with_capacity(w * h);
    for y in y0..y0 + h {
        let row = y * img.width;
        data.extend_from_slice(&img.data[row + x0..row + x0 + w]);
    }
    Ok(GrayImage {
        width: w,
        height: h,
        data,
    })
}

/// Maps `values` affinely so the minimum becomes 0 and the maximum 1; a
/// constant plane becomes all zeros. Used to view filters and feature maps.
pub fn stretch_to_unit(width: usize, height: usize, values: &[f64]) -> Result<GrayImage> {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = hi - lo;
    let data = values
        .iter()
        .map(|&v| if span > 0.0 { (v - lo) / span } else { 0.0 })
        .collect();
    GrayImage::new(width, height, data)
}

/// Mirrors the image left to right.
pub fn hflip(img: &GrayImage) -> GrayImage {
    let mut data = Vec::with_capacity(img.data.len());
    for row in img.data.chunks(img.width.max(1)) {
        data.extend(row.iter().rev());
    }
    GrayImage {
        width: img.width,
        height: img.height,
        data,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn stretch_spans_unit_interval() {
        let img = stretch_to_unit(3, 1, &[-2.0, 0.0, 2.0]).unwrap();
        assert_eq!(img.data(), &[0.0, 0.5, 1.0]);
        let flat = stretch_to_unit(2, 1, &[4.0, 4.0]).unwrap();
        assert_eq!(flat.data(), &[0.0, 0.0]);
    }

    fn pgm(w: usize, h: usize, pixels: &[u8]) -> Vec<u8> {
        let mut v = format!("P5\n{w} {h}\n255\n").into_bytes();
        v.extend_from_slice(pixels);
        v
    }

    #[test]
    fn decode_single_white_pixel() {
        let img = decode_pgm(&pgm(1, 1, &[255])).unwrap();
        assert_eq!((img.width(), img.height()), (1, 1));
        assert_eq!(img.data(), &[1.0]);
    }

    #[test]
    fn decode_normalizes_by_255() {
        let img = decode_pgm(&pgm(2, 1, &[0, 128])).unwrap();
        assert_eq!(img.data()[0], 0.0);
        assert!((img.data()[1] - 128.0 / 255.0).abs() < 1e-15);
        assert!((img.data()[1] - 0.50196).abs() < 1e-5);
    }

    #[test]
    fn decode_rejects_ascii_variant() {
        let bytes = b"P2\n1 1\n255\n0\n";
        assert!(matches!(decode_pgm(bytes), Err(Error::MalformedHeader(_))));
    }

    #[test]
    fn decode_rejects_other_maxval() {
        let bytes = b"P5\n1 1\n65535\n\x00\x00";
        assert!(matches!(
            decode_pgm(bytes),
            Err(Error::UnsupportedMaxval(65535))
        ));
    }

    #[test]
    fn decode_detects_truncation() {
        let bytes = pgm(2, 2, &[1, 2, 3]);
        assert!(matches!(
            decode_pgm(&bytes),
            Err(Error::TruncatedData {
                expected: 4,
                found: 3
            })
        ));
    }

    #[test]
    fn decode_skips_header_comments() {
        let mut bytes = b"P5\n# made by hand\n2 1 # trailing\n255\n".to_vec();
        bytes.extend_from_slice(&[10, 20]);
        let img = decode_pgm(&bytes).unwrap();
        assert_eq!(img.width(), 2);
    }

    #[test]
    fn encode_levels() {
        let tail = |v: f64| *encode_pgm(&GrayImage::filled(1, 1, v)).last().unwrap();
        assert_eq!(tail(0.0), 0);
        assert_eq!(tail(1.0), 255);
        assert_eq!(tail(0.5), 128);
        assert!(encode_pgm(&GrayImage::filled(1, 1, 0.0)).starts_with(b"P5"));
    }

    #[test]
    fn resize_identity_and_constant() {
        let img = GrayImage::new(3, 2, vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6]).unwrap();
        assert_eq!(resize_bilinear(&img, 3, 2).unwrap(), img);
        let one = GrayImage::filled(1, 1, 0.37);
        let big = resize_bilinear(&one, 5, 7).unwrap();
        assert!(big.data().iter().all(|&v| v == 0.37));
    }

    #[test]
    fn resize_two_to_four_half_pixel() {
        // source coordinates: -0.25 (clamped), 0.25, 0.75, 1.25 (clamped)
        let img = GrayImage::new(2, 1, vec![0.0, 1.0]).unwrap();
        let out = resize_bilinear(&img, 4, 1).unwrap();
        let expected = [0.0, 0.25, 0.75, 1.0];
        for (a, b) in out.data().iter().zip(expected) {
            assert!((a - b).abs() < 1e-15, "{:?}", out.data());
        }
    }

    #[test]
    fn resize_zero_dimension() {
        let img = GrayImage::filled(2, 2, 0.0);
        assert!(matches!(
            resize_bilinear(&img, 0, 3),
            Err(Error::ZeroDimension)
        ));
    }

    #[test]
    fn crop_right_columns_of_ramp() {
        // 3x2 ramp: value = column index
        let img = GrayImage::new(3, 2, vec![0.0, 0.5, 1.0, 0.0, 0.5, 1.0]).unwrap();
        let c = crop(&img, 1, 0, 2, 2).unwrap();
        assert_eq!(c.data(), &[0.5, 1.0, 0.5, 1.0]);
        assert_eq!(crop(&img, 0, 0, 3, 2).unwrap(), img);
        assert!(matches!(
            crop(&img, 2, 0, 2, 2),
            Err(Error::OutOfBounds { .. })
        ));
    }

    fn arb_image() -> impl Strategy<Value = GrayImage> {
        (1usize..9, 1usize..9).prop_flat_map(|(w, h)| {
            prop::collection::vec(0.0f64..=1.0, w * h)
                .prop_map(move |d| GrayImage::new(w, h, d).unwrap())
        })
    }

    proptest! {
        #[test]
        fn pgm_roundtrip_within_quantization(img in arb_image()) {
            let back = decode_pgm(&encode_pgm(&img)).unwrap();
            prop_assert_eq!((back.width(), back.height()), (img.width(), img.height()));
            for (a, b) in img.data().iter().zip(back.data()) {
                prop_assert!((a - b).abs() <= 0.5 / 255.0 + 1e-12);
            }
        }

        #[test]
        fn hflip_is_involution(img in arb_image()) {
            prop_assert_eq!(hflip(&hflip(&img)), img);
        }

        #[test]
        fn crop_of_crop_adds_offsets(img in arb_image(), a in 0usize..4, b in 0usize..4) {
            let (w, h) = (img.width(), img.height());
            let (x0, y0) = (a.min(w - 1), b.min(h - 1));
            let outer = crop(&img, x0, y0, w - x0, h - y0).unwrap();
            let (x1, y1) = ((w - x0) / 2, (h - y0) / 2);
            let (cw, ch) = (w - x0 - x1, h - y0 - y1);
            let inner = crop(&outer, x1, y1, cw, ch).unwrap();
            prop_assert_eq!(inner, crop(&img, x0 + x1, y0 + y1, cw, ch).unwrap());
        }

        #[test]
        fn resize_constant_stays_constant(v in 0.0f64..=1.0, w in 1usize..6, h in 1usize..6,
                                          ow in 1usize..12, oh in 1usize..12) {
            let out = resize_bilinear(&GrayImage::filled(w, h, v), ow, oh).unwrap();
            for &x in out.data() {
                prop_assert!((x - v).abs() < 1e-12);
            }
        }
    }
}
