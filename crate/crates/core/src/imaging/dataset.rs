//! Synthetic bracket generation over a directory of radiance maps.

use std::path::{Path, PathBuf};

use log::warn;

use crate::error::{Error, Result};
use crate::io::{self, manifest::{ev_tag, Manifest, ManifestRow}};

use super::crf::Crf;
use super::exposure::{synth_stack, BitDepth};

/// Default EV offsets: −4..+4 in whole stops.
pub const DEFAULT_EVS: [f64; 9] = [-4.0, -3.0, -2.0, -1.0, 0.0, 1.0, 2.0, 3.0, 4.0];

fn is_hdr_file(p: &Path) -> bool {
    matches!(
        p.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref(),
        Some("hdr" | "pic" | "pfm")
    )
}

/// File-system-safe version of a curve name.
pub fn slug(name: &str) -> String {
    name.chars()
        .map(|c| if c.is_ascii_alphanumeric() || matches!(c, '-' | '.' | '_') { c } else { '_' })
        .collect()
}

/// Render every (scene × curve) stack under `out_dir` and write `out_dir/manifest.tsv`.
pub fn synth_dataset(
    hdr_dir: &Path,
    crfs: &[Crf],
    ev_offsets: &[f64],
    bit_depth: BitDepth,
    out_dir: &Path,
) -> Result<Manifest> {
    let mut inputs: Vec<PathBuf> = std::fs::read_dir(hdr_dir)
        .map_err(|e| Error::io(hdr_dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && is_hdr_file(p))
        .collect();
    inputs.sort();

    let mut manifest = Manifest::default();
    for path in &inputs {
        let radiance = match io::read_hdr(path) {
            Ok(r) => r,
            Err(e) => {
                warn!("skipping unreadable HDR file: {e}");
                continue;
            }
        };
        let scene = path
            .file_stem()
            .and_then(|s| s.to_str())
            .map(slug)
            .unwrap_or_else(|| "scene".into());
        for crf in crfs {
            let stack = synth_stack(&radiance, ev_offsets, crf, bit_depth, &scene)?;
            let crf_dir = slug(crf.name());
            for img in stack.images() {
                let rel = PathBuf::from(&scene)
                    .join(&crf_dir)
                    .join(format!("{}.png", ev_tag(img.ev())));
                io::write_ldr(out_dir.join(&rel), &img.pixels, bit_depth)?;
                manifest.rows.push(ManifestRow {
                    scene_id: scene.clone(),
                    crf_name: crf.name().to_string(),
                    ev: img.ev(),
                    path: rel,
                    bit_depth,
                });
            }
        }
    }
    if manifest.rows.is_empty() {
        return Err(Error::Empty(format!(
            "no stacks synthesized from {}",
            hdr_dir.display()
        )));
    }
    manifest.write(out_dir.join("manifest.tsv"))?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::RgbImage;
    use crate::imaging::RadianceMap;

    fn write_scene(dir: &Path, name: &str) {
        let img = RgbImage::from_fn(8, 8, |x, y| [0.1 + x as f64 * 0.1, 0.2 + y as f64 * 0.05, 0.3]);
        io::write_hdr(dir.join(name), &RadianceMap::new(img).unwrap()).unwrap();
    }

    #[test]
    fn one_scene_one_curve_nine_evs() {
        let src = tempfile::tempdir().unwrap();
        let out = tempfile::tempdir().unwrap();
        write_scene(src.path(), "a.pfm");
        let m = synth_dataset(src.path(), &[Crf::gamma(2.2)], &DEFAULT_EVS, BitDepth::Eight, out.path()).unwrap();
        assert_eq!(m.rows.len(), 9);
        assert_eq!(m.groups().len(), 1);
        let stacks = Manifest::read(out.path().join("manifest.tsv"))
            .unwrap()
            .load_stacks(out.path())
            .unwrap();
        assert_eq!(stacks.len(), 1);
        assert_eq!(stacks[0].len(), 9);
    }

    #[test]
    fn two_scenes_five_curves() {
        let src = tempfile::tempdir().unwrap();
        let out = tempfile::tempdir().unwrap();
        write_scene(src.path(), "a.hdr");
        write_scene(src.path(), "b.pfm");
        std::fs::write(src.path().join("broken.hdr"), b"not an hdr").unwrap();
        let crfs: Vec<Crf> = [1.0, 1.4, 1.8, 2.2, 2.6].iter().map(|&g| Crf::gamma(g)).collect();
        let m = synth_dataset(src.path(), &crfs, &DEFAULT_EVS, BitDepth::Eight, out.path()).unwrap();
        assert_eq!(m.rows.len(), 90);
        let pngs = walk_pngs(out.path());
        assert_eq!(pngs, 90);
    }

    #[test]
    fn empty_output_is_an_error() {
        let src = tempfile::tempdir().unwrap();
        let out = tempfile::tempdir().unwrap();
        let r = synth_dataset(src.path(), &[Crf::identity()], &[0.0], BitDepth::Eight, out.path());
        assert!(matches!(r, Err(Error::Empty(_))));
    }

    fn walk_pngs(dir: &Path) -> usize {
        let mut n = 0;
        for e in std::fs::read_dir(dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                n += walk_pngs(&p);
            } else if p.extension().is_some_and(|e| e == "png") {
                n += 1;
            }
        }
        n
    }
}
