//! 8-bit PNG storage for `[C, H, W]` rasters with the linear map
//! `[0, 1] ↔ [0, 255]`.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use png::{BitDepth, ColorType, Transformations};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub type Raster = Tensor<f32>;

pub fn quantize(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

pub fn write_png(path: &Path, r: &Raster) -> Result<()> {
    let s = r.shape();
    let (c, h, w) = (s[0], s[1], s[2]);
    let color = match c {
        1 => ColorType::Grayscale,
        3 => ColorType::Rgb,
        _ => return Err(Error::shape(format!("cannot store {c}-channel raster as png"))),
    };
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut enc = png::Encoder::new(BufWriter::new(file), w as u32, h as u32);
    enc.set_color(color);
    enc.set_depth(BitDepth::Eight);
    let mut bytes = vec![0u8; c * h * w];
    let d = r.data();
    for y in 0..h {
        for x in 0..w {
            for ch in 0..c {
                bytes[(y * w + x) * c + ch] = quantize(d[(ch * h + y) * w + x]);
            }
        }
    }
    let to_err = |e: png::EncodingError| Error::Format(format!("{}: {e}", path.display()));
    let mut writer = enc.write_header().map_err(to_err)?;
    writer.write_image_data(&bytes).map_err(to_err)?;
    writer.finish().map_err(to_err)?;
    Ok(())
}

/// Decode a grayscale or RGB png. 8-bit samples map to `v/255`; 16-bit
/// samples are read on the same 0–255 scale, so values above 1.0 can be
/// represented (and are then rejected by validation).
pub fn read_png(path: &Path) -> Result<Raster> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut dec = png::Decoder::new(BufReader::new(file));
    dec.set_transformations(Transformations::IDENTITY);
    let fmt_err = |e: png::DecodingError| Error::Format(format!("{}: {e}", path.display()));
    let mut reader = dec.read_info().map_err(fmt_err)?;
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| Error::Format(format!("{}: image too large", path.display())))?;
    let mut buf = vec![0u8; size];
    let info = reader.next_frame(&mut buf).map_err(fmt_err)?;
    let c = match info.color_type {
        ColorType::Grayscale => 1,
        ColorType::Rgb => 3,
        other => {
            return Err(Error::Format(format!(
                "{}: unsupported color type {other:?}",
                path.display()
            )))
        }
    };
    let (w, h) = (info.width as usize, info.height as usize);
    let sample = |i: usize| -> f32 {
        match info.bit_depth {
            BitDepth::Eight => buf[i] as f32 / 255.0,
            BitDepth::Sixteen => u16::from_be_bytes([buf[2 * i], buf[2 * i + 1]]) as f32 / 65535.0,
            _ => f32::NAN,
        }
    };
    if !matches!(info.bit_depth, BitDepth::Eight | BitDepth::Sixteen) {
        return Err(Error::Format(format!(
            "{}: unsupported bit depth {:?}",
            path.display(),
            info.bit_depth
        )));
    }
    let mut data = vec![0f32; c * h * w];
    for y in 0..h {
        for x in 0..w {
            for ch in 0..c {
                data[(ch * h + y) * w + x] = sample((y * w + x) * c + ch);
            }
        }
    }
    Ok(Tensor::from_vec(&[c, h, w], data))
}

/// Write a single-channel 16-bit png; values are clamped to [0, 1].
pub fn write_png16_gray(path: &Path, r: &Raster) -> Result<()> {
    let s = r.shape();
    let (h, w) = (s[1], s[2]);
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut enc = png::Encoder::new(BufWriter::new(file), w as u32, h as u32);
    enc.set_color(ColorType::Grayscale);
    enc.set_depth(BitDepth::Sixteen);
    let mut bytes = Vec::with_capacity(2 * h * w);
    for &v in r.data() {
        bytes.extend_from_slice(&((v.clamp(0.0, 1.0) * 65535.0).round() as u16).to_be_bytes());
    }
    let to_err = |e: png::EncodingError| Error::Format(format!("{}: {e}", path.display()));
    let mut writer = enc.write_header().map_err(to_err)?;
    writer.write_image_data(&bytes).map_err(to_err)?;
    writer.finish().map_err(to_err)?;
    Ok(())
}
