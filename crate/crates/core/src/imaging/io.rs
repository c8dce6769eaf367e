//! Raster I/O: 8/16-bit PNG and TIFF in, 8-bit PNG and `.npy` float arrays out.

use std::fs;
use std::io::Write;
use std::path::Path;

use image::{DynamicImage, ImageBuffer, Luma, Rgb};

use super::image::{Image, ValueRange};
use crate::error::{ComirError, Result};

fn interleaved_to_planar<T: Copy>(raw: &[T], channels: usize, scale: impl Fn(T) -> f32) -> Vec<f32> {
    let n = raw.len() / channels;
    let mut out = vec![0.0f32; raw.len()];
    for (i, px) in raw.chunks_exact(channels).enumerate() {
        for (c, v) in px.iter().enumerate() {
            out[c * n + i] = scale(*v);
        }
    }
    out
}

/// Loads a PNG or TIFF, keeping the stored channel order and normalizing
/// integer samples by their type maximum into `range`.
pub fn load_image(path: &Path, range: ValueRange) -> Result<Image> {
    let dynimg = image::open(path).map_err(|source| ComirError::Codec {
        path: path.to_path_buf(),
        source,
    })?;
    let (w, h) = (dynimg.width() as usize, dynimg.height() as usize);
    let (channels, unit): (usize, Vec<f32>) = match &dynimg {
        DynamicImage::ImageLuma8(b) => (1, interleaved_to_planar(b.as_raw(), 1, |v| v as f32 / 255.0)),
        DynamicImage::ImageLumaA8(b) => (2, interleaved_to_planar(b.as_raw(), 2, |v| v as f32 / 255.0)),
        DynamicImage::ImageRgb8(b) => (3, interleaved_to_planar(b.as_raw(), 3, |v| v as f32 / 255.0)),
        DynamicImage::ImageRgba8(b) => (4, interleaved_to_planar(b.as_raw(), 4, |v| v as f32 / 255.0)),
        DynamicImage::ImageLuma16(b) => (1, interleaved_to_planar(b.as_raw(), 1, |v| v as f32 / 65535.0)),
        DynamicImage::ImageLumaA16(b) => (2, interleaved_to_planar(b.as_raw(), 2, |v| v as f32 / 65535.0)),
        DynamicImage::ImageRgb16(b) => (3, interleaved_to_planar(b.as_raw(), 3, |v| v as f32 / 65535.0)),
        DynamicImage::ImageRgba16(b) => (4, interleaved_to_planar(b.as_raw(), 4, |v| v as f32 / 65535.0)),
        DynamicImage::ImageRgb32F(b) => (3, interleaved_to_planar(b.as_raw(), 3, |v| v)),
        DynamicImage::ImageRgba32F(b) => (4, interleaved_to_planar(b.as_raw(), 4, |v| v)),
        other => {
            let b = other.to_rgba32f();
            (4, interleaved_to_planar(b.as_raw(), 4, |v| v))
        }
    };
    let span = range.hi - range.lo;
    let data = unit.into_iter().map(|v| range.lo + span * v).collect();
    let mut img = Image::new(channels, h, w, data)?;
    img.value_range = range;
    Ok(img)
}

/// Writes a 1- or 3-channel image with values already in `[0, 255]` as an 8-bit PNG.
pub fn save_png8(img: &Image, path: &Path) -> Result<()> {
    let (w, h) = (img.width() as u32, img.height() as u32);
    let q = |v: f32| v.round().clamp(0.0, 255.0) as u8;
    let res = match img.channels() {
        1 => {
            let buf: ImageBuffer<Luma<u8>, Vec<u8>> =
                ImageBuffer::from_raw(w, h, img.data().iter().map(|&v| q(v)).collect())
                    .expect("buffer size");
            buf.save(path)
        }
        3 => {
            let n = img.plane_len();
            let mut raw = Vec::with_capacity(3 * n);
            for i in 0..n {
                for c in 0..3 {
                    raw.push(q(img.plane(c)[i]));
                }
            }
            let buf: ImageBuffer<Rgb<u8>, Vec<u8>> =
                ImageBuffer::from_raw(w, h, raw).expect("buffer size");
            buf.save(path)
        }
        c => {
            return Err(ComirError::InvalidImage(format!(
                "PNG export needs 1 or 3 channels, got {c}"
            )))
        }
    };
    res.map_err(|source| ComirError::Codec {
        path: path.to_path_buf(),
        source,
    })
}

/// Writes a `c × h × w` little-endian `f32` array in NumPy `.npy` v1 format.
pub fn save_npy(img: &Image, path: &Path) -> Result<()> {
    let mut header = format!(
        "{{'descr': '<f4', 'fortran_order': False, 'shape': ({}, {}, {}), }}",
        img.channels(),
        img.height(),
        img.width()
    );
    // magic(6) + version(2) + len(2) + header + '\n' must be a multiple of 64
    let total = 10 + header.len() + 1;
    header.push_str(&" ".repeat((64 - total % 64) % 64));
    header.push('\n');
    let mut bytes = Vec::with_capacity(10 + header.len() + 4 * img.data().len());
    bytes.extend_from_slice(b"\x93NUMPY\x01\x00");
    bytes.extend_from_slice(&(header.len() as u16).to_le_bytes());
    bytes.extend_from_slice(header.as_bytes());
    for v in img.data() {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    let mut f = fs::File::create(path).map_err(|e| ComirError::io(path, e))?;
    f.write_all(&bytes).map_err(|e| ComirError::io(path, e))
}

/// Reads a 2-D or 3-D little-endian `f4`/`f8` C-order `.npy` array as an image.
pub fn load_npy(path: &Path) -> Result<Image> {
    let bytes = fs::read(path).map_err(|e| ComirError::io(path, e))?;
    let bad = |msg: &str| ComirError::InvalidImage(format!("{}: {msg}", path.display()));
    if bytes.len() < 10 || &bytes[..6] != b"\x93NUMPY" {
        return Err(bad("not an npy file"));
    }
    let (hlen, start) = match bytes[6] {
        1 => (u16::from_le_bytes([bytes[8], bytes[9]]) as usize, 10),
        2 | 3 => (
            u32::from_le_bytes([bytes[8], bytes[9], bytes[10], bytes[11]]) as usize,
            12,
        ),
        _ => return Err(bad("unsupported npy version")),
    };
    let header = std::str::from_utf8(&bytes[start..start + hlen]).map_err(|_| bad("bad header"))?;
    if header.contains("'fortran_order': True") {
        return Err(bad("fortran order not supported"));
    }
    let descr = if header.contains("'<f4'") {
        4
    } else if header.contains("'<f8'") {
        8
    } else {
        return Err(bad("only <f4 and <f8 are supported"));
    };
    let shape_str = header
        .split("'shape':")
        .nth(1)
        .and_then(|s| s.split('(').nth(1))
        .and_then(|s| s.split(')').next())
        .ok_or_else(|| bad("missing shape"))?;
    let dims: Vec<usize> = shape_str
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse().map_err(|_| bad("bad shape")))
        .collect::<Result<_>>()?;
    let (c, h, w) = match dims.as_slice() {
        [h, w] => (1, *h, *w),
        [c, h, w] => (*c, *h, *w),
        _ => return Err(bad("expected 2 or 3 dimensions")),
    };
    let body = &bytes[start + hlen..];
    if body.len() != c * h * w * descr {
        return Err(bad("payload size does not match shape"));
    }
    let data = if descr == 4 {
        body.chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect()
    } else {
        body.chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().unwrap()) as f32)
            .collect()
    };
    Image::new(c, h, w, data)
}

/// Dispatches on extension: `.npy` arrays load raw, rasters load normalized to `[0, 1]`.
pub fn load_any(path: &Path) -> Result<Image> {
    match path.extension().and_then(|e| e.to_str()) {
        Some("npy") => load_npy(path),
        _ => load_image(path, ValueRange::default()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn npy_round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let img = Image::new(2, 3, 4, (0..24).map(|i| i as f32 * 0.37 - 2.0).collect()).unwrap();
        let p = dir.path().join("a.npy");
        save_npy(&img, &p).unwrap();
        let back = load_npy(&p).unwrap();
        assert_eq!(back.data(), img.data());
        assert_eq!((back.channels(), back.height(), back.width()), (2, 3, 4));
        let raw = std::fs::read(&p).unwrap();
        let hlen = u16::from_le_bytes([raw[8], raw[9]]) as usize;
        assert_eq!((10 + hlen) % 64, 0);
    }

    #[test]
    fn sixteen_bit_png_normalizes_to_unit_range() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("g16.png");
        let buf: ImageBuffer<Luma<u16>, Vec<u16>> =
            ImageBuffer::from_raw(2, 1, vec![0u16, 65535]).unwrap();
        buf.save(&p).unwrap();
        let img = load_image(&p, ValueRange::default()).unwrap();
        assert_eq!(img.data(), &[0.0, 1.0]);
    }

    #[test]
    fn four_channel_tiff_keeps_channel_order() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.tif");
        let raw: Vec<u16> = vec![100, 200, 300, 400, 500, 600, 700, 800];
        let buf: ImageBuffer<image::Rgba<u16>, Vec<u16>> = ImageBuffer::from_raw(2, 1, raw).unwrap();
        buf.save(&p).unwrap();
        let img = load_image(&p, ValueRange::default()).unwrap();
        assert_eq!(img.channels(), 4);
        assert!((img.get(0, 0, 1) - 500.0 / 65535.0).abs() < 1e-7);
        assert!((img.get(3, 0, 0) - 400.0 / 65535.0).abs() < 1e-7);
    }

    #[test]
    fn png8_export_quantizes() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("v.png");
        let img = Image::new(1, 1, 3, vec![0.0, 127.5, 300.0]).unwrap();
        save_png8(&img, &p).unwrap();
        let back = load_image(&p, ValueRange { lo: 0.0, hi: 255.0 }).unwrap();
        assert_eq!(back.data(), &[0.0, 128.0, 255.0]);
    }
}
