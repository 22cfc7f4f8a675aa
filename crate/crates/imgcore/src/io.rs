//! PNG and raw float I/O.
//!
//! PNGs are 8-bit grayscale or RGB. Values are quantized with
//! round-half-up: `q = ⌊255·v + 0.5⌋` after clamping to [0,1].
//!
//! Raw dumps use the NPY v1.0 layout so they open directly in NumPy:
//! the 6-byte magic `\x93NUMPY`, version bytes `1 0`, a little-endian u16
//! header length, an ASCII dict header
//! `{'descr': '<f4', 'fortran_order': False, 'shape': (C, H, W), }`
//! space-padded and newline-terminated to a 64-byte boundary, then the
//! planar little-endian f32 payload.

use std::fs;
use std::io::Write;
use std::path::Path;

use image::{DynamicImage, GrayImage, ImageBuffer, RgbImage};

use crate::error::{ImgError, Result};
use crate::image::Image;

const NPY_MAGIC: &[u8] = b"\x93NUMPY";

#[inline]
pub fn quantize(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0 + 0.5).floor() as u8
}

#[inline]
pub fn dequantize(q: u8) -> f32 {
    q as f32 / 255.0
}

/// Rounds every sample to the nearest of the 256 storable levels.
pub fn quantize_image(img: &Image) -> Image {
    img.map(|v| dequantize(quantize(v)))
}

pub fn write_png(img: &Image, path: impl AsRef<Path>) -> Result<()> {
    let (h, w) = (img.height() as u32, img.width() as u32);
    match img.channels() {
        1 => {
            let buf: Vec<u8> = img.plane(0).iter().map(|&v| quantize(v)).collect();
            let gray: GrayImage = ImageBuffer::from_raw(w, h, buf).expect("buffer sized");
            gray.save(path)?;
        }
        3 => {
            let n = img.pixel_count();
            let mut buf = Vec::with_capacity(3 * n);
            for i in 0..n {
                for c in 0..3 {
                    buf.push(quantize(img.plane(c)[i]));
                }
            }
            let rgb: RgbImage = ImageBuffer::from_raw(w, h, buf).expect("buffer sized");
            rgb.save(path)?;
        }
        actual => {
            return Err(ImgError::ChannelCount {
                expected: 3,
                actual,
            })
        }
    }
    Ok(())
}

/// Reads a PNG. Gray files load as one channel, everything else as RGB.
pub fn read_png(path: impl AsRef<Path>) -> Result<Image> {
    let bytes = fs::read(path)?;
    let dynamic = image::load_from_memory_with_format(&bytes, image::ImageFormat::Png)?;
    let gray = matches!(
        dynamic,
        DynamicImage::ImageLuma8(_) | DynamicImage::ImageLuma16(_)
    );
    if gray {
        let g = dynamic.to_luma8();
        let (w, h) = g.dimensions();
        Image::from_vec(
            h as usize,
            w as usize,
            1,
            g.into_raw().into_iter().map(dequantize).collect(),
        )
    } else {
        let rgb = dynamic.to_rgb8();
        let (w, h) = (rgb.width() as usize, rgb.height() as usize);
        let raw = rgb.into_raw();
        Ok(Image::from_fn(h, w, 3, |y, x, c| {
            dequantize(raw[(y * w + x) * 3 + c])
        }))
    }
}

pub fn encode_npy(img: &Image) -> Vec<u8> {
    let mut header = format!(
        "{{'descr': '<f4', 'fortran_order': False, 'shape': ({}, {}, {}), }}",
        img.channels(),
        img.height(),
        img.width()
    );
    let unpadded = NPY_MAGIC.len() + 2 + 2 + header.len() + 1;
    header.push_str(&" ".repeat((64 - unpadded % 64) % 64));
    header.push('\n');

    let mut out = Vec::with_capacity(10 + header.len() + 4 * img.data().len());
    out.extend_from_slice(NPY_MAGIC);
    out.extend_from_slice(&[1, 0]);
    out.extend_from_slice(&(header.len() as u16).to_le_bytes());
    out.extend_from_slice(header.as_bytes());
    for v in img.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_npy(bytes: &[u8]) -> Result<Image> {
    let bad = |m: &str| ImgError::RawFormat(m.to_string());
    if bytes.len() < 10 || &bytes[..6] != NPY_MAGIC {
        return Err(bad("missing magic"));
    }
    if bytes[6] != 1 {
        return Err(bad("unsupported version"));
    }
    let hlen = u16::from_le_bytes([bytes[8], bytes[9]]) as usize;
    let header = std::str::from_utf8(bytes.get(10..10 + hlen).ok_or_else(|| bad("short header"))?)
        .map_err(|_| bad("header is not ascii"))?;
    if !header.contains("'descr': '<f4'") || !header.contains("'fortran_order': False") {
        return Err(bad("only little-endian f32 C-order payloads are supported"));
    }
    let start = header.find("'shape': (").ok_or_else(|| bad("no shape"))? + 10;
    let end = start + header[start..].find(')').ok_or_else(|| bad("unterminated shape"))?;
    let dims: Vec<usize> = header[start..end]
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse().map_err(|_| bad("non-integer dimension")))
        .collect::<Result<_>>()?;
    let (c, h, w) = match dims.as_slice() {
        [h, w] => (1, *h, *w),
        [c, h, w] => (*c, *h, *w),
        _ => return Err(bad("expected 2 or 3 dimensions")),
    };
    let payload = &bytes[10 + hlen..];
    if payload.len() != 4 * c * h * w {
        return Err(bad("payload length does not match shape"));
    }
    let data = payload
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .collect();
    Image::from_vec(h, w, c, data)
}

pub fn write_npy(img: &Image, path: impl AsRef<Path>) -> Result<()> {
    let mut f = fs::File::create(path)?;
    f.write_all(&encode_npy(img))?;
    Ok(())
}

pub fn read_npy(path: impl AsRef<Path>) -> Result<Image> {
    decode_npy(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quantization_rounds_half_up() {
        assert_eq!(quantize(0.0), 0);
        assert_eq!(quantize(1.0), 255);
        assert_eq!(quantize(0.5 / 255.0), 1);
        assert_eq!(quantize(0.49 / 255.0), 0);
        assert_eq!(quantize(-3.0), 0);
        assert_eq!(quantize(7.0), 255);
    }

    #[test]
    fn png_round_trip_is_quantized_identity() {
        let dir = tempfile::tempdir().unwrap();
        for channels in [1, 3] {
            let img = Image::from_fn(7, 9, channels, |y, x, c| {
                ((y * 9 + x) * 3 + c) as f32 / 200.0 % 1.0
            });
            let q = quantize_image(&img);
            let path = dir.path().join(format!("c{channels}.png"));
            write_png(&img, &path).unwrap();
            let back = read_png(&path).unwrap();
            assert_eq!(back, q);
            write_png(&back, &path).unwrap();
            assert_eq!(read_png(&path).unwrap(), q);
        }
    }

    #[test]
    fn npy_round_trip_is_lossless() {
        let img = Image::from_fn(5, 4, 3, |y, x, c| (y as f32).sin() + x as f32 * 1e-7 + c as f32);
        let bytes = encode_npy(&img);
        assert_eq!(&bytes[..6], NPY_MAGIC);
        let hlen = u16::from_le_bytes([bytes[8], bytes[9]]) as usize;
        assert_eq!((10 + hlen) % 64, 0);
        assert_eq!(decode_npy(&bytes).unwrap(), img);
    }

    #[test]
    fn npy_rejects_garbage() {
        assert!(decode_npy(b"not an npy file").is_err());
        let mut bytes = encode_npy(&Image::zeros(2, 2, 1));
        bytes.pop();
        assert!(decode_npy(&bytes).is_err());
    }
}
