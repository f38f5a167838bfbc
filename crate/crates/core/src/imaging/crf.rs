//! Camera response curves: application, numeric inversion, and the DoRF text layout.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

/// Number of samples in a DoRF curve.
pub const DORF_SAMPLES: usize = 1024;

/// A monotone response curve `f` mapping sensor exposure to brightness, both in `[0,1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Crf {
    name: String,
    samples_x: Vec<f64>,
    samples_b: Vec<f64>,
}

/// Result of applying a curve to one value.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Response {
    pub value: f64,
    pub clipped: bool,
}

impl Crf {
    /// Build a curve from raw samples, normalizing both axes onto `[0,1]`.
    pub fn new(name: impl Into<String>, samples_x: Vec<f64>, samples_b: Vec<f64>) -> Result<Self> {
        let name = name.into();
        let fail = |msg: String| Error::Dorf {
            curve: name.clone(),
            msg,
        };
        if samples_x.len() != samples_b.len() {
            return Err(fail(format!(
                "{} exposure samples vs {} brightness samples",
                samples_x.len(),
                samples_b.len()
            )));
        }
        if samples_x.len() < 2 {
            return Err(fail("need at least two samples".into()));
        }
        if let Some(i) = samples_x.iter().chain(&samples_b).position(|v| !v.is_finite()) {
            return Err(fail(format!("non-finite sample at position {i}")));
        }
        if let Some(i) = samples_x.windows(2).position(|w| w[1] <= w[0]) {
            return Err(fail(format!("exposure samples not ascending at index {}", i + 1)));
        }
        if let Some(i) = samples_b.windows(2).position(|w| w[1] < w[0]) {
            return Err(fail(format!("brightness decreases at index {}", i + 1)));
        }
        let (b0, b1) = (samples_b[0], *samples_b.last().unwrap());
        if b1 <= b0 {
            return Err(fail("brightness range is empty".into()));
        }
        let (x0, x1) = (samples_x[0], *samples_x.last().unwrap());
        let samples_x = normalize(samples_x, x0, x1);
        let samples_b = normalize(samples_b, b0, b1);
        Ok(Crf {
            name,
            samples_x,
            samples_b,
        })
    }

    /// `f(x) = x` on a DoRF-sized grid.
    pub fn identity() -> Self {
        let xs = unit_grid(DORF_SAMPLES);
        Crf::new("identity", xs.clone(), xs).expect("identity curve is valid")
    }

    /// `f(x) = x^(1/gamma)` on a DoRF-sized grid.
    pub fn gamma(gamma: f64) -> Self {
        let xs = unit_grid(DORF_SAMPLES);
        let bs = xs.iter().map(|x| x.powf(1.0 / gamma)).collect();
        Crf::new(format!("gamma-{gamma}"), xs, bs).expect("gamma curve is valid")
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn samples_x(&self) -> &[f64] {
        &self.samples_x
    }

    pub fn samples_b(&self) -> &[f64] {
        &self.samples_b
    }

    /// Apply the curve, clipping the exposure to `[0,1]` first.
    pub fn respond(&self, x: f64) -> Response {
        let clipped = !(0.0..=1.0).contains(&x);
        let x = if x.is_nan() { 0.0 } else { x.clamp(0.0, 1.0) };
        Response {
            value: interp(&self.samples_x, &self.samples_b, x),
            clipped,
        }
    }

    pub fn apply(&self, x: f64) -> f64 {
        self.respond(x).value
    }

    pub fn apply_slice(&self, xs: &[f64]) -> Vec<f64> {
        xs.iter().map(|&x| self.apply(x)).collect()
    }

    /// Numeric inverse `f⁻¹(b)`. Flat runs map to the midpoint of their preimage.
    pub fn invert(&self, b: f64) -> f64 {
        let b = if b.is_nan() { 0.0 } else { b.clamp(0.0, 1.0) };
        let bs = &self.samples_b;
        let xs = &self.samples_x;
        // first sample >= b, last sample <= b
        let lo = bs.partition_point(|&v| v < b);
        let hi = bs.partition_point(|&v| v <= b);
        if hi > lo {
            let last = hi - 1;
            return 0.5 * (xs[lo] + xs[last]);
        }
        if lo == 0 {
            return xs[0];
        }
        if lo >= bs.len() {
            return xs[bs.len() - 1];
        }
        let (b0, b1) = (bs[lo - 1], bs[lo]);
        let t = (b - b0) / (b1 - b0);
        xs[lo - 1] + t * (xs[lo] - xs[lo - 1])
    }

    pub fn invert_slice(&self, bs: &[f64]) -> Vec<f64> {
        bs.iter().map(|&b| self.invert(b)).collect()
    }

    /// Segment indices `i` where `samples_b[i+1] > samples_b[i]`.
    pub fn increasing_segments(&self) -> impl Iterator<Item = usize> + '_ {
        self.samples_b
            .windows(2)
            .enumerate()
            .filter(|(_, w)| w[1] > w[0])
            .map(|(i, _)| i)
    }
}

fn normalize(v: Vec<f64>, lo: f64, hi: f64) -> Vec<f64> {
    let span = hi - lo;
    let n = v.len();
    v.into_iter()
        .enumerate()
        .map(|(i, s)| {
            if i == 0 {
                0.0
            } else if i + 1 == n {
                1.0
            } else {
                ((s - lo) / span).clamp(0.0, 1.0)
            }
        })
        .collect()
}

fn unit_grid(n: usize) -> Vec<f64> {
    (0..n).map(|i| i as f64 / (n - 1) as f64).collect()
}

/// Piecewise-linear interpolation through ascending `xs`.
fn interp(xs: &[f64], ys: &[f64], x: f64) -> f64 {
    let i = xs.partition_point(|&v| v < x);
    if i == 0 {
        return ys[0];
    }
    if i >= xs.len() {
        return ys[ys.len() - 1];
    }
    let t = (x - xs[i - 1]) / (xs[i] - xs[i - 1]);
    ys[i - 1] + t * (ys[i] - ys[i - 1])
}

/// Which curves to keep from a parsed DoRF file.
#[derive(Clone, Debug)]
pub enum CurveSelection {
    All,
    /// Evenly strided picks over the file order.
    Count(usize),
    /// Explicit names, returned in file order.
    Names(Vec<String>),
}

/// Indices picked by an evenly strided selection of `count` out of `total` curves.
pub fn strided_indices(total: usize, count: usize) -> Vec<usize> {
    match count {
        0 => Vec::new(),
        1 => vec![0],
        _ => (0..count)
            .map(|i| ((i * (total - 1)) as f64 / (count - 1) as f64).round() as usize)
            .collect(),
    }
}

/// Parse the DoRF text layout.
///
/// Each curve is a name line, a metadata line, then an `I =` block and a `B =`
/// block. The values may follow the `=` on the same line or sit on the next
/// line. Blank lines are ignored.
pub fn parse_dorf(text: &str) -> Result<Vec<Crf>> {
    let mut lines = text.lines().map(str::trim).filter(|l| !l.is_empty()).peekable();
    let mut curves = Vec::new();
    while let Some(name) = lines.next() {
        let name = name.to_string();
        let malformed = |msg: &str| Error::Dorf {
            curve: name.clone(),
            msg: msg.to_string(),
        };
        let _meta = lines.next().ok_or_else(|| malformed("missing metadata line"))?;
        let xs = read_block(&mut lines, 'I').map_err(|m| malformed(&m))?;
        let bs = read_block(&mut lines, 'B').map_err(|m| malformed(&m))?;
        if xs.len() != bs.len() {
            return Err(malformed(&format!(
                "{} irradiance values but {} brightness values",
                xs.len(),
                bs.len()
            )));
        }
        curves.push(Crf::new(name.clone(), xs, bs)?);
    }
    Ok(curves)
}

fn read_block<'a>(
    lines: &mut std::iter::Peekable<impl Iterator<Item = &'a str>>,
    tag: char,
) -> std::result::Result<Vec<f64>, String> {
    let head = lines
        .next()
        .ok_or_else(|| format!("missing `{tag} =` block"))?;
    let rest = head
        .strip_prefix(tag)
        .map(str::trim_start)
        .and_then(|r| r.strip_prefix('='))
        .ok_or_else(|| format!("expected `{tag} =`, found `{}`", truncate(head)))?;
    let body = if rest.trim().is_empty() {
        lines
            .next()
            .ok_or_else(|| format!("missing values after `{tag} =`"))?
    } else {
        rest
    };
    body.split_whitespace()
        .map(|t| {
            t.parse::<f64>()
                .map_err(|_| format!("bad number `{t}` in `{tag}` block"))
        })
        .collect()
}

fn truncate(s: &str) -> &str {
    &s[..s.len().min(40)]
}

/// Read a DoRF file and keep the selected curves.
pub fn load_dorf(path: impl AsRef<Path>, selection: &CurveSelection) -> Result<Vec<Crf>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let curves = parse_dorf(&text)?;
    select_curves(curves, selection)
}

pub fn select_curves(curves: Vec<Crf>, selection: &CurveSelection) -> Result<Vec<Crf>> {
    match selection {
        CurveSelection::All => Ok(curves),
        CurveSelection::Count(k) => {
            if *k > curves.len() {
                return Err(Error::Invalid(format!(
                    "requested {k} curves but the file holds {}",
                    curves.len()
                )));
            }
            let keep = strided_indices(curves.len(), *k);
            Ok(curves
                .into_iter()
                .enumerate()
                .filter(|(i, _)| keep.contains(i))
                .map(|(_, c)| c)
                .collect())
        }
        CurveSelection::Names(names) => {
            if let Some(missing) = names.iter().find(|n| !curves.iter().any(|c| &c.name == *n)) {
                return Err(Error::Invalid(format!("no curve named `{missing}`")));
            }
            Ok(curves
                .into_iter()
                .filter(|c| names.iter().any(|n| n == &c.name))
                .collect())
        }
    }
}

/// Serialize curves in the DoRF layout.
pub fn format_dorf(curves: &[Crf]) -> String {
    let mut out = String::new();
    for c in curves {
        let _ = writeln!(out, "{}", c.name);
        out.push_str("graph\nI =\n");
        push_values(&mut out, &c.samples_x);
        out.push_str("B =\n");
        push_values(&mut out, &c.samples_b);
    }
    out
}

fn push_values(out: &mut String, v: &[f64]) {
    for (i, x) in v.iter().enumerate() {
        if i > 0 {
            out.push(' ');
        }
        let _ = write!(out, "{x:.6e}");
    }
    out.push('\n');
}
