//! Tab-separated manifest listing every image of every stack with its exposure.

use std::io::Write;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::imaging::{BitDepth, ExposureMeta, ExposureStack, LdrImage};

pub const MAGIC: &str = "#hdrbracket-manifest v1";
const HEADER: &str = "scene_id\tcrf_name\tev\tpath\tbit_depth";

#[derive(Clone, Debug, PartialEq)]
pub struct ManifestRow {
    pub scene_id: String,
    pub crf_name: String,
    pub ev: f64,
    /// Relative to the manifest's directory unless absolute.
    pub path: PathBuf,
    pub bit_depth: BitDepth,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Manifest {
    pub rows: Vec<ManifestRow>,
}

/// `ev+1.00`, `ev-0.75`.
pub fn ev_tag(ev: f64) -> String {
    format!("ev{ev:+.2}")
}

fn check_field(field: &str, what: &str) -> Result<()> {
    if field.is_empty() || field.contains(['\t', '\n', '\r']) {
        return Err(Error::Manifest(format!("{what} `{field}` is empty or contains tabs/newlines")));
    }
    Ok(())
}

impl Manifest {
    pub fn to_text(&self) -> Result<String> {
        let mut out = format!("{MAGIC}\n{HEADER}\n");
        for r in &self.rows {
            check_field(&r.scene_id, "scene id")?;
            check_field(&r.crf_name, "curve name")?;
            let path = r.path.to_string_lossy();
            check_field(&path, "path")?;
            out.push_str(&format!(
                "{}\t{}\t{}\t{}\t{}\n",
                r.scene_id,
                r.crf_name,
                r.ev,
                path,
                r.bit_depth.bits()
            ));
        }
        Ok(out)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        if lines.next().map(str::trim_end) != Some(MAGIC) {
            return Err(Error::Manifest(format!("missing `{MAGIC}` header")));
        }
        if lines.next().map(str::trim_end) != Some(HEADER) {
            return Err(Error::Manifest("missing column header".into()));
        }
        let mut rows = Vec::new();
        for (i, line) in lines.enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let cols: Vec<&str> = line.split('\t').collect();
            let lineno = i + 3;
            if cols.len() != 5 {
                return Err(Error::Manifest(format!(
                    "line {lineno}: expected 5 columns, found {}",
                    cols.len()
                )));
            }
            let ev = cols[2]
                .parse::<f64>()
                .map_err(|_| Error::Manifest(format!("line {lineno}: bad EV `{}`", cols[2])))?;
            let bits = cols[4]
                .trim()
                .parse::<u32>()
                .map_err(|_| Error::Manifest(format!("line {lineno}: bad bit depth `{}`", cols[4])))?;
            rows.push(ManifestRow {
                scene_id: cols[0].to_string(),
                crf_name: cols[1].to_string(),
                ev,
                path: PathBuf::from(cols[3]),
                bit_depth: BitDepth::from_bits(bits)?,
            });
        }
        Ok(Manifest { rows })
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = self.to_text()?;
        let mut w = super::create_file(path)?;
        w.write_all(text.as_bytes())
            .and_then(|_| w.flush())
            .map_err(|e| Error::io(path, e))
    }

    /// Rows grouped by `(scene_id, crf_name)` in first-appearance order.
    pub fn groups(&self) -> Vec<(&str, &str, Vec<&ManifestRow>)> {
        let mut out: Vec<(&str, &str, Vec<&ManifestRow>)> = Vec::new();
        for r in &self.rows {
            match out
                .iter_mut()
                .find(|(s, c, _)| *s == r.scene_id && *c == r.crf_name)
            {
                Some(g) => g.2.push(r),
                None => out.push((&r.scene_id, &r.crf_name, vec![r])),
            }
        }
        out
    }

    /// Decode every stack, resolving relative paths against `base_dir`.
    pub fn load_stacks(&self, base_dir: &Path) -> Result<Vec<ExposureStack>> {
        self.groups()
            .into_iter()
            .map(|(scene, crf, rows)| {
                let images = rows
                    .into_iter()
                    .map(|r| {
                        let path = base_dir.join(&r.path);
                        let (pixels, bit_depth) = super::read_ldr(&path)?;
                        Ok(LdrImage {
                            pixels,
                            meta: ExposureMeta::from_ev(r.ev),
                            crf_name: Some(crf.to_string()),
                            bit_depth,
                        })
                    })
                    .collect::<Result<Vec<_>>>()?;
                ExposureStack::new(format!("{scene}/{crf}"), images)
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_round_trip() {
        let m = Manifest {
            rows: vec![ManifestRow {
                scene_id: "s0".into(),
                crf_name: "gamma-2.2".into(),
                ev: -0.75,
                path: "s0/gamma-2.2/ev-0.75.png".into(),
                bit_depth: BitDepth::Sixteen,
            }],
        };
        assert_eq!(Manifest::parse(&m.to_text().unwrap()).unwrap(), m);
    }

    #[test]
    fn rejects_missing_magic() {
        assert!(Manifest::parse("scene_id\tcrf_name\tev\tpath\tbit_depth\n").is_err());
    }

    #[test]
    fn ev_tag_format() {
        assert_eq!(ev_tag(2.0), "ev+2.00");
        assert_eq!(ev_tag(-0.75), "ev-0.75");
        assert_eq!(ev_tag(0.0), "ev+0.00");
    }
}
