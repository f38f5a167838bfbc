//! PNG codec for 8/16-bit RGB images and single-channel masks.

use std::io::{BufRead, Seek, Write};

use png::{BitDepth as PngDepth, ColorType, Transformations};

use crate::imaging::BitDepth;
use crate::image::RgbImage;

pub fn read<R: BufRead + Seek>(r: R) -> Result<(RgbImage, BitDepth), String> {
    let mut decoder = png::Decoder::new(r);
    decoder.set_transformations(Transformations::EXPAND);
    let mut reader = decoder.read_info().map_err(|e| e.to_string())?;
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| "image too large".to_string())?;
    let mut buf = vec![0u8; size];
    let info = reader.next_frame(&mut buf).map_err(|e| e.to_string())?;
    let (width, height) = (info.width as usize, info.height as usize);
    let channels = match info.color_type {
        ColorType::Grayscale => 1,
        ColorType::GrayscaleAlpha => 2,
        ColorType::Rgb => 3,
        ColorType::Rgba => 4,
        ColorType::Indexed => return Err("palette was not expanded".into()),
    };
    let (depth, samples): (BitDepth, Vec<f64>) = match info.bit_depth {
        PngDepth::Sixteen => (
            BitDepth::Sixteen,
            buf[..info.buffer_size()]
                .chunks_exact(2)
                .map(|b| u16::from_be_bytes([b[0], b[1]]) as f64 / 65535.0)
                .collect(),
        ),
        PngDepth::Eight => (
            BitDepth::Eight,
            buf[..info.buffer_size()].iter().map(|&b| b as f64 / 255.0).collect(),
        ),
        other => return Err(format!("unsupported bit depth {other:?}")),
    };
    let stride = info.line_size / if depth == BitDepth::Sixteen { 2 } else { 1 };
    let img = RgbImage::from_fn(width, height, |x, y| {
        let p = &samples[y * stride + x * channels..];
        match channels {
            1 | 2 => [p[0]; 3],
            _ => [p[0], p[1], p[2]],
        }
    });
    Ok((img, depth))
}

pub fn write_rgb<W: Write>(w: W, img: &RgbImage, depth: BitDepth) -> Result<(), String> {
    let (width, height) = img.dims();
    let mut enc = png::Encoder::new(w, width as u32, height as u32);
    enc.set_color(ColorType::Rgb);
    let data: Vec<u8> = match depth {
        BitDepth::Eight => {
            enc.set_depth(PngDepth::Eight);
            img.data().iter().map(|&v| to_level(v, 255.0) as u8).collect()
        }
        BitDepth::Sixteen => {
            enc.set_depth(PngDepth::Sixteen);
            img.data()
                .iter()
                .flat_map(|&v| (to_level(v, 65535.0) as u16).to_be_bytes())
                .collect()
        }
    };
    let mut writer = enc.write_header().map_err(|e| e.to_string())?;
    writer.write_image_data(&data).map_err(|e| e.to_string())?;
    writer.finish().map_err(|e| e.to_string())
}

/// Write one 8-bit grayscale channel.
pub fn write_gray<W: Write>(w: W, width: usize, height: usize, values: &[f64]) -> Result<(), String> {
    let mut enc = png::Encoder::new(w, width as u32, height as u32);
    enc.set_color(ColorType::Grayscale);
    enc.set_depth(PngDepth::Eight);
    let data: Vec<u8> = values.iter().map(|&v| to_level(v, 255.0) as u8).collect();
    let mut writer = enc.write_header().map_err(|e| e.to_string())?;
    writer.write_image_data(&data).map_err(|e| e.to_string())?;
    writer.finish().map_err(|e| e.to_string())
}

fn to_level(v: f64, max: f64) -> f64 {
    let v = if v.is_nan() { 0.0 } else { v };
    (v.clamp(0.0, 1.0) * max).round()
}
