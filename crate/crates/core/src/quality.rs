//! PSNR, SSIM and the evaluation harness for generated stacks and HDR maps.

use std::fmt::Write as _;
use std::path::Path;
use std::process::Command;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{luma_of, RgbImage};
use crate::imaging::{ExposureStack, RadianceMap};
use crate::hdr_recon::{tonemap_reinhard, TonemapParams};

/// Reported PSNR for identical inputs (and the upper clamp otherwise).
pub const PSNR_CAP: f64 = 99.0;

pub fn psnr_from_mse(mse: f64, peak: f64) -> f64 {
    if mse <= 0.0 {
        return PSNR_CAP;
    }
    (10.0 * (peak * peak / mse).log10()).min(PSNR_CAP)
}

pub fn mse(a: &RgbImage, b: &RgbImage) -> Result<f64> {
    a.ensure_same_shape(b)?;
    let n = a.data().len() as f64;
    Ok(a.data().iter().zip(b.data()).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / n)
}

pub fn psnr(a: &RgbImage, b: &RgbImage, peak: f64) -> Result<f64> {
    if !(peak > 0.0) {
        return Err(Error::Invalid(format!("peak must be positive, got {peak}")));
    }
    Ok(psnr_from_mse(mse(a, b)?, peak))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SsimParams {
    pub window: usize,
    pub sigma: f64,
    pub k1: f64,
    pub k2: f64,
    pub peak: f64,
}

impl Default for SsimParams {
    fn default() -> Self {
        SsimParams {
            window: 11,
            sigma: 1.5,
            k1: 0.01,
            k2: 0.03,
            peak: 1.0,
        }
    }
}

fn gaussian_kernel(size: usize, sigma: f64) -> Vec<f64> {
    let c = (size as f64 - 1.0) / 2.0;
    let k: Vec<f64> = (0..size).map(|i| (-(i as f64 - c).powi(2) / (2.0 * sigma * sigma)).exp()).collect();
    let s: f64 = k.iter().sum();
    k.into_iter().map(|v| v / s).collect()
}

/// Separable "valid" filtering of one plane.
fn filter_valid(plane: &[f64], w: usize, h: usize, k: &[f64]) -> (Vec<f64>, usize, usize) {
    let n = k.len();
    let (ow, oh) = (w - n + 1, h - n + 1);
    let mut rows = vec![0.0; ow * h];
    for y in 0..h {
        for x in 0..ow {
            rows[y * ow + x] = (0..n).map(|i| k[i] * plane[y * w + x + i]).sum();
        }
    }
    let mut out = vec![0.0; ow * oh];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (0..n).map(|i| k[i] * rows[(y + i) * ow + x]).sum();
        }
    }
    (out, ow, oh)
}

/// Mean local SSIM of one plane.
pub fn ssim_plane(a: &[f64], b: &[f64], w: usize, h: usize, p: &SsimParams) -> Result<f64> {
    if w < p.window || h < p.window {
        return Err(Error::Invalid(format!(
            "image {w}x{h} smaller than the {0}x{0} SSIM window",
            p.window
        )));
    }
    let k = gaussian_kernel(p.window, p.sigma);
    let prod = |f: &dyn Fn(f64, f64) -> f64| a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect::<Vec<_>>();
    let (mu_a, ..) = filter_valid(a, w, h, &k);
    let (mu_b, ..) = filter_valid(b, w, h, &k);
    let (aa, ..) = filter_valid(&prod(&|x, _| x * x), w, h, &k);
    let (bb, ..) = filter_valid(&prod(&|_, y| y * y), w, h, &k);
    let (ab, ..) = filter_valid(&prod(&|x, y| x * y), w, h, &k);
    let c1 = (p.k1 * p.peak).powi(2);
    let c2 = (p.k2 * p.peak).powi(2);
    let mut sum = 0.0;
    for i in 0..mu_a.len() {
        let (ma, mb) = (mu_a[i], mu_b[i]);
        let va = aa[i] - ma * ma;
        let vb = bb[i] - mb * mb;
        let cov = ab[i] - ma * mb;
        sum += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
    }
    Ok(sum / mu_a.len() as f64)
}

/// SSIM averaged over the three channels.
pub fn ssim(a: &RgbImage, b: &RgbImage, p: &SsimParams) -> Result<f64> {
    a.ensure_same_shape(b)?;
    let (w, h) = a.dims();
    let mut total = 0.0;
    for c in 0..3 {
        let pa: Vec<f64> = a.pixels().map(|px| px[c]).collect();
        let pb: Vec<f64> = b.pixels().map(|px| px[c]).collect();
        total += ssim_plane(&pa, &pb, w, h, p)?;
    }
    Ok(total / 3.0)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvMetrics {
    pub ev: f64,
    pub psnr: f64,
    pub ssim: f64,
}

/// PSNR/SSIM per EV; both stacks must hold the same EVs.
pub fn evaluate_stacks(pred: &ExposureStack, reference: &ExposureStack, p: &SsimParams) -> Result<Vec<EvMetrics>> {
    let (pe, re) = (pred.evs(), reference.evs());
    if pe.len() != re.len() || pe.iter().zip(&re).any(|(a, b)| (a - b).abs() > 1e-9) {
        return Err(Error::EvMismatch {
            pred: pe,
            reference: re,
        });
    }
    pred.images()
        .iter()
        .zip(reference.images())
        .map(|(a, b)| {
            Ok(EvMetrics {
                ev: b.ev(),
                psnr: psnr(&a.pixels, &b.pixels, p.peak)?,
                ssim: ssim(&a.pixels, &b.pixels, p)?,
            })
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HdrMetrics {
    pub tm_psnr: f64,
    pub tm_ssim: f64,
    pub linear_psnr: f64,
}

/// Nearest-rank percentile of the luminance channel.
pub fn luminance_percentile(e: &RadianceMap, q: f64) -> f64 {
    let mut l: Vec<f64> = e.pixels().pixels().map(luma_of).collect();
    l.sort_by(f64::total_cmp);
    let rank = ((q / 100.0) * l.len() as f64).ceil() as usize;
    l[rank.clamp(1, l.len()) - 1]
}

/// Normalize both maps by the reference's 99.9th-percentile luminance, then
/// compare linearly and after tone mapping each with `tmo`.
pub fn evaluate_hdr(pred: &RadianceMap, reference: &RadianceMap, tmo: &TonemapParams, p: &SsimParams) -> Result<HdrMetrics> {
    pred.pixels().ensure_same_shape(reference.pixels())?;
    let mut norm = luminance_percentile(reference, 99.9);
    if !(norm > 0.0) {
        norm = reference.pixels().data().iter().fold(0.0f64, |m, &v| m.max(v));
    }
    if !(norm > 0.0) {
        norm = 1.0;
    }
    let np = pred.scaled(1.0 / norm);
    let nr = reference.scaled(1.0 / norm);
    let tp = tonemap_reinhard(&np, tmo)?;
    let tr = tonemap_reinhard(&nr, tmo)?;
    Ok(HdrMetrics {
        tm_psnr: psnr(&tp.pixels, &tr.pixels, 1.0)?,
        tm_ssim: ssim(&tp.pixels, &tr.pixels, p)?,
        linear_psnr: psnr(np.pixels(), nr.pixels(), 1.0)?,
    })
}

/// One row of a metric table.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricRow {
    pub scene: String,
    pub ev: f64,
    pub psnr: f64,
    pub ssim: f64,
}

/// Tab-separated table: one row per scene and EV, then per-EV means.
pub fn format_metric_table(rows: &[MetricRow]) -> String {
    let mut out = String::from("scene\tev\tpsnr\tssim\n");
    for r in rows {
        let _ = writeln!(out, "{}\t{:+.2}\t{:.4}\t{:.6}", r.scene, r.ev, r.psnr, r.ssim);
    }
    let mut evs: Vec<f64> = rows.iter().map(|r| r.ev).collect();
    evs.sort_by(f64::total_cmp);
    evs.dedup();
    for ev in evs {
        let sel: Vec<&MetricRow> = rows.iter().filter(|r| r.ev == ev).collect();
        let n = sel.len() as f64;
        let _ = writeln!(
            out,
            "mean\t{ev:+.2}\t{:.4}\t{:.6}",
            sel.iter().map(|r| r.psnr).sum::<f64>() / n,
            sel.iter().map(|r| r.ssim).sum::<f64>() / n
        );
    }
    out
}

/// Metric computed outside this crate (e.g. a learned perceptual metric).
pub trait ExternalMetric {
    fn name(&self) -> &str;
    fn evaluate(&self, pred: &Path, reference: &Path) -> Result<f64>;
}

/// Runs `program args.. <pred> <ref>` and parses the last stdout line as a number.
#[derive(Clone, Debug, PartialEq)]
pub struct CommandMetric {
    pub name: String,
    pub program: String,
    pub args: Vec<String>,
}

impl ExternalMetric for CommandMetric {
    fn name(&self) -> &str {
        &self.name
    }

    fn evaluate(&self, pred: &Path, reference: &Path) -> Result<f64> {
        let out = Command::new(&self.program)
            .args(&self.args)
            .arg(pred)
            .arg(reference)
            .output()
            .map_err(|e| Error::io(&self.program, e))?;
        if !out.status.success() {
            return Err(Error::Invalid(format!("metric {} exited with {}", self.name, out.status)));
        }
        let text = String::from_utf8_lossy(&out.stdout);
        text.lines()
            .rev()
            .find(|l| !l.trim().is_empty())
            .and_then(|l| l.trim().parse().ok())
            .ok_or_else(|| Error::Invalid(format!("metric {} printed no number", self.name)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pattern(w: usize, h: usize) -> RgbImage {
        RgbImage::from_fn(w, h, |x, y| {
            let v = if (x / 2 + y / 2) % 2 == 0 { 0.9 } else { 0.1 };
            [v, v * 0.8, 1.0 - v]
        })
    }

    #[test]
    fn psnr_cases() {
        let a = pattern(12, 12);
        assert_eq!(psnr(&a, &a, 1.0).unwrap(), PSNR_CAP);
        assert_eq!(psnr_from_mse(0.01, 1.0), 20.0);
        let z = RgbImage::filled(4, 4, 0.2);
        let o = RgbImage::filled(4, 4, 0.3);
        assert!((psnr(&z, &o, 1.0).unwrap() - 20.0).abs() < 1e-9);
    }

    #[test]
    fn ssim_cases() {
        let a = pattern(16, 16);
        assert!((ssim(&a, &a, &SsimParams::default()).unwrap() - 1.0).abs() < 1e-9);
        let neg = a.map(|v| 1.0 - v);
        assert!(ssim(&a, &neg, &SsimParams::default()).unwrap() < 0.5);
        let (c1, c2) = (0.3, 0.6);
        let got = ssim(&RgbImage::filled(11, 11, c1), &RgbImage::filled(11, 11, c2), &SsimParams::default()).unwrap();
        let cc = 0.01f64.powi(2);
        let want = (2.0 * c1 * c2 + cc) / (c1 * c1 + c2 * c2 + cc);
        assert!((got - want).abs() < 1e-12, "{got} vs {want}");
        assert!(ssim(&RgbImage::filled(10, 12, 0.0), &RgbImage::filled(10, 12, 0.0), &SsimParams::default()).is_err());
    }

    #[test]
    fn table_has_means() {
        let rows = vec![
            MetricRow { scene: "a".into(), ev: -2.0, psnr: 30.0, ssim: 0.9 },
            MetricRow { scene: "b".into(), ev: -2.0, psnr: 32.0, ssim: 0.8 },
        ];
        let t = format_metric_table(&rows);
        assert!(t.contains("mean\t-2.00\t31.0000\t0.850000"));
    }
}
