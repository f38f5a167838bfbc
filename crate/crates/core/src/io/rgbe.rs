//! Radiance RGBE (`.hdr`) codec. Reads flat and new-style run-length scanlines,
//! writes run-length scanlines where the width allows it.

use std::io::{BufRead, Write};

use crate::image::RgbImage;

/// Encode one pixel into shared-exponent form.
pub fn encode_pixel(rgb: [f64; 3]) -> [u8; 4] {
    let v = rgb[0].max(rgb[1]).max(rgb[2]);
    if !(v > 1e-32) || !v.is_finite() {
        return [0, 0, 0, 0];
    }
    let (mant, exp) = frexp(v);
    let scale = mant * 256.0 / v;
    let q = |c: f64| (c.max(0.0) * scale).floor().min(255.0) as u8;
    [q(rgb[0]), q(rgb[1]), q(rgb[2]), (exp + 128) as u8]
}

pub fn decode_pixel(p: [u8; 4]) -> [f64; 3] {
    if p[3] == 0 {
        return [0.0; 3];
    }
    let f = ldexp(1.0, p[3] as i32 - (128 + 8));
    [p[0] as f64 * f, p[1] as f64 * f, p[2] as f64 * f]
}

/// `v = m · 2^e` with `m ∈ [0.5, 1)`.
fn frexp(v: f64) -> (f64, i32) {
    let e = v.log2().floor() as i32 + 1;
    let mut m = v / ldexp(1.0, e);
    let mut e = e;
    // guard against log2 rounding at exact powers of two
    if m >= 1.0 {
        m /= 2.0;
        e += 1;
    } else if m < 0.5 {
        m *= 2.0;
        e -= 1;
    }
    (m, e)
}

fn ldexp(x: f64, e: i32) -> f64 {
    x * 2f64.powi(e)
}

pub fn write<W: Write>(mut w: W, img: &RgbImage) -> std::io::Result<()> {
    let (width, height) = img.dims();
    write!(w, "#?RADIANCE\nFORMAT=32-bit_rle_rgbe\n\n-Y {height} +X {width}\n")?;
    let mut line = vec![[0u8; 4]; width];
    for y in 0..height {
        for (x, px) in line.iter_mut().enumerate() {
            *px = encode_pixel(img.pixel(x, y));
        }
        if (8..0x8000).contains(&width) {
            w.write_all(&[2, 2, (width >> 8) as u8, (width & 0xff) as u8])?;
            for c in 0..4 {
                let chan: Vec<u8> = line.iter().map(|p| p[c]).collect();
                write_rle_channel(&mut w, &chan)?;
            }
        } else {
            for px in &line {
                w.write_all(px)?;
            }
        }
    }
    Ok(())
}

fn write_rle_channel<W: Write>(w: &mut W, data: &[u8]) -> std::io::Result<()> {
    let mut i = 0;
    while i < data.len() {
        // length of run starting at i
        let mut run = 1;
        while i + run < data.len() && run < 127 && data[i + run] == data[i] {
            run += 1;
        }
        if run >= 3 {
            w.write_all(&[128 + run as u8, data[i]])?;
            i += run;
            continue;
        }
        // literal block until the next run of >= 3
        let start = i;
        let mut len = 0;
        while i < data.len() && len < 128 {
            if i + 2 < data.len() && data[i] == data[i + 1] && data[i] == data[i + 2] {
                break;
            }
            i += 1;
            len += 1;
        }
        w.write_all(&[len as u8])?;
        w.write_all(&data[start..start + len])?;
    }
    Ok(())
}

pub fn read<R: BufRead>(mut r: R) -> Result<RgbImage, String> {
    let mut line = String::new();
    let mut first = true;
    let mut saw_format = false;
    loop {
        line.clear();
        if r.read_line(&mut line).map_err(|e| e.to_string())? == 0 {
            return Err("truncated header".into());
        }
        let t = line.trim_end();
        if first {
            if !t.starts_with("#?") {
                return Err("missing #? signature".into());
            }
            first = false;
            continue;
        }
        if t.is_empty() {
            break;
        }
        if let Some(fmt) = t.strip_prefix("FORMAT=") {
            if fmt != "32-bit_rle_rgbe" {
                return Err(format!("unsupported pixel format {fmt}"));
            }
            saw_format = true;
        }
    }
    let _ = saw_format;
    line.clear();
    r.read_line(&mut line).map_err(|e| e.to_string())?;
    let toks: Vec<&str> = line.split_whitespace().collect();
    let (height, width) = match toks.as_slice() {
        ["-Y", h, "+X", w] => (
            h.parse::<usize>().map_err(|_| "bad height")?,
            w.parse::<usize>().map_err(|_| "bad width")?,
        ),
        _ => return Err(format!("unsupported resolution line `{}`", line.trim())),
    };
    let mut img = RgbImage::new(width, height);
    let mut scan = vec![[0u8; 4]; width];
    for y in 0..height {
        read_scanline(&mut r, &mut scan)?;
        for (x, p) in scan.iter().enumerate() {
            img.set_pixel(x, y, decode_pixel(*p));
        }
    }
    Ok(img)
}

fn read_exact<R: BufRead>(r: &mut R, buf: &mut [u8]) -> Result<(), String> {
    r.read_exact(buf).map_err(|_| "truncated pixel data".to_string())
}

fn read_scanline<R: BufRead>(r: &mut R, scan: &mut [[u8; 4]]) -> Result<(), String> {
    let width = scan.len();
    let mut head = [0u8; 4];
    read_exact(r, &mut head)?;
    let is_rle = head[0] == 2 && head[1] == 2 && head[2] & 0x80 == 0 && (8..0x8000).contains(&width);
    if !is_rle {
        scan[0] = head;
        for px in scan.iter_mut().skip(1) {
            read_exact(r, px)?;
        }
        return Ok(());
    }
    let encoded = ((head[2] as usize) << 8) | head[3] as usize;
    if encoded != width {
        return Err(format!("scanline width {encoded} does not match image width {width}"));
    }
    for c in 0..4 {
        let mut x = 0;
        while x < width {
            let mut b = [0u8; 1];
            read_exact(r, &mut b)?;
            if b[0] > 128 {
                let n = (b[0] - 128) as usize;
                let mut v = [0u8; 1];
                read_exact(r, &mut v)?;
                if x + n > width {
                    return Err("run overflows scanline".into());
                }
                for px in &mut scan[x..x + n] {
                    px[c] = v[0];
                }
                x += n;
            } else {
                let n = b[0] as usize;
                if n == 0 || x + n > width {
                    return Err("bad literal count in scanline".into());
                }
                let mut vals = vec![0u8; n];
                read_exact(r, &mut vals)?;
                for (px, v) in scan[x..x + n].iter_mut().zip(vals) {
                    px[c] = v;
                }
                x += n;
            }
        }
    }
    Ok(())
}
