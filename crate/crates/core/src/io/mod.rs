//! File codecs: Radiance RGBE and PFM for radiance, PNG for display-referred
//! images, plus the line-oriented manifest format.

pub mod manifest;
pub mod pfm;
pub mod png;
pub mod rgbe;

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::image::RgbImage;
use crate::imaging::{BitDepth, RadianceMap};

fn extension(path: &Path) -> String {
    path.extension()
        .and_then(|e| e.to_str())
        .unwrap_or("")
        .to_ascii_lowercase()
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| Error::io(path, e))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::io(path, e))
}

/// Read a radiance map from `.hdr`/`.pic` (RGBE) or `.pfm`.
pub fn read_hdr(path: impl AsRef<Path>) -> Result<RadianceMap> {
    let path = path.as_ref();
    let pixels = match extension(path).as_str() {
        "hdr" | "pic" => rgbe::read(open(path)?),
        "pfm" => pfm::read(open(path)?),
        other => return Err(Error::codec(path, format!("unsupported HDR extension `{other}`"))),
    }
    .map_err(|m| Error::codec(path, m))?;
    Ok(RadianceMap::from_clamped(pixels))
}

pub fn write_hdr(path: impl AsRef<Path>, map: &RadianceMap) -> Result<()> {
    let path = path.as_ref();
    let ext = extension(path);
    if !matches!(ext.as_str(), "hdr" | "pic" | "pfm") {
        return Err(Error::codec(path, format!("unsupported HDR extension `{ext}`")));
    }
    let mut w = create(path)?;
    match ext.as_str() {
        "pfm" => pfm::write(&mut w, map.pixels()),
        _ => rgbe::write(&mut w, map.pixels()),
    }
    .and_then(|_| w.flush())
    .map_err(|e| Error::io(path, e))
}

/// Read a PNG, returning samples in `[0,1]` and the stored bit depth.
pub fn read_ldr(path: impl AsRef<Path>) -> Result<(RgbImage, BitDepth)> {
    let path = path.as_ref();
    if extension(path) != "png" {
        return Err(Error::codec(path, "only PNG is supported for LDR images"));
    }
    png::read(open(path)?).map_err(|m| Error::codec(path, m))
}

pub fn write_ldr(path: impl AsRef<Path>, img: &RgbImage, depth: BitDepth) -> Result<()> {
    let path = path.as_ref();
    if extension(path) != "png" {
        return Err(Error::codec(path, "only PNG is supported for LDR images"));
    }
    let mut w = create(path)?;
    png::write_rgb(&mut w, img, depth).map_err(|m| Error::codec(path, m))?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_gray_png(path: impl AsRef<Path>, width: usize, height: usize, values: &[f64]) -> Result<()> {
    let path = path.as_ref();
    let mut w = create(path)?;
    png::write_gray(&mut w, width, height, values).map_err(|m| Error::codec(path, m))?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub(crate) fn create_file(path: &Path) -> Result<BufWriter<File>> {
    create(path)
}
