//! Portable float map codec. Rows are stored bottom-to-top; the sign of the
//! scale field selects the byte order (negative = little-endian).

use std::io::{BufRead, Write};

use crate::image::RgbImage;

pub fn write<W: Write>(mut w: W, img: &RgbImage) -> std::io::Result<()> {
    let (width, height) = img.dims();
    write!(w, "PF\n{width} {height}\n-1.0\n")?;
    let mut row = Vec::with_capacity(width * 12);
    for y in (0..height).rev() {
        row.clear();
        for x in 0..width {
            for c in img.pixel(x, y) {
                row.extend_from_slice(&(c as f32).to_le_bytes());
            }
        }
        w.write_all(&row)?;
    }
    Ok(())
}

fn token<R: BufRead>(r: &mut R) -> Result<String, String> {
    let mut out = Vec::new();
    let mut b = [0u8; 1];
    loop {
        if r.read(&mut b).map_err(|e| e.to_string())? == 0 {
            return Err("truncated header".into());
        }
        if b[0].is_ascii_whitespace() {
            if out.is_empty() {
                continue;
            }
            return String::from_utf8(out).map_err(|_| "header is not ASCII".into());
        }
        out.push(b[0]);
    }
}

pub fn read<R: BufRead>(mut r: R) -> Result<RgbImage, String> {
    let channels = match token(&mut r)?.as_str() {
        "PF" => 3,
        "Pf" => 1,
        other => return Err(format!("bad PFM signature `{other}`")),
    };
    let width: usize = token(&mut r)?.parse().map_err(|_| "bad width")?;
    let height: usize = token(&mut r)?.parse().map_err(|_| "bad height")?;
    let scale: f64 = token(&mut r)?.parse().map_err(|_| "bad scale")?;
    if scale == 0.0 {
        return Err("scale field must be nonzero".into());
    }
    let little = scale < 0.0;
    let mut raw = vec![0u8; width * height * channels * 4];
    r.read_exact(&mut raw)
        .map_err(|_| "truncated pixel data".to_string())?;
    let mut img = RgbImage::new(width, height);
    let mut vals = raw.chunks_exact(4).map(|b| {
        let b = [b[0], b[1], b[2], b[3]];
        if little {
            f32::from_le_bytes(b)
        } else {
            f32::from_be_bytes(b)
        }
    });
    for y in (0..height).rev() {
        for x in 0..width {
            let px = if channels == 3 {
                [
                    vals.next().unwrap() as f64,
                    vals.next().unwrap() as f64,
                    vals.next().unwrap() as f64,
                ]
            } else {
                let v = vals.next().unwrap() as f64;
                [v, v, v]
            };
            img.set_pixel(x, y, px);
        }
    }
    Ok(img)
}
