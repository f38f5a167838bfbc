//! Command-line front end. Every subcommand is a thin wrapper over library calls.

use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use log::{info, warn};

use crate::brackets::generate_stack;
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::hdr_recon::{merge, tonemap_reinhard, MergeMethod};
use crate::imaging::{load_dorf, synth_dataset, BitDepth, Crf, CurveSelection, ExposureMeta, ExposureStack, LdrImage};
use crate::imaging::dataset::slug;
use crate::io::manifest::{ev_tag, Manifest, ManifestRow};
use crate::io::{read_hdr, read_ldr, write_gray_png, write_hdr, write_ldr};
use crate::masking::{well_exposed_mask, MaskConfig, MaskVariant};
use crate::model::load_checkpoint;
use crate::quality::{evaluate_hdr, evaluate_stacks, format_metric_table, MetricRow};
use crate::trainer::{fit, TrainState};

/// Curve label written to manifests of generated brackets.
pub const GENERATED_CURVE: &str = "generated";

#[derive(Debug, Parser)]
#[command(name = "hdrbracket", version, about = "Exposure bracket generation and HDR merging")]
pub struct Cli {
    /// TOML run configuration; flags override it.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render LDR stacks from a directory of radiance maps.
    SynthDataset {
        #[arg(long)]
        hdr_dir: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// DoRF response file.
        #[arg(long)]
        dorf: Option<PathBuf>,
        /// Number of curves, picked with an even stride.
        #[arg(long)]
        curves: Option<usize>,
        #[arg(long, value_delimiter = ',')]
        curve_names: Vec<String>,
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        evs: Option<Vec<f64>>,
        #[arg(long)]
        bits: Option<u32>,
    },
    /// Train the encoder and exposure networks on a manifest.
    Train {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        steps: Option<u64>,
        /// Continue from a training checkpoint.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Generate a bracket from one PNG.
    InferStack {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        weights: PathBuf,
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        evs: Option<Vec<f64>>,
        #[arg(long, allow_hyphen_values = true)]
        input_ev: Option<f64>,
        /// Output directory; defaults to the input's directory.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        scene_id: Option<String>,
        #[arg(long)]
        bits: Option<u32>,
    },
    /// Merge every stack of a manifest into a radiance map.
    MergeHdr {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        dorf: Option<PathBuf>,
        /// Response name; `identity` and `gamma-<g>` need no DoRF file.
        #[arg(long)]
        curve: Option<String>,
        #[arg(long, value_parser = parse_method)]
        method: Option<MergeMethod>,
        /// Output extension, `hdr` or `pfm`.
        #[arg(long, default_value = "hdr")]
        format: String,
    },
    /// Reinhard global tone mapping of a radiance map to PNG.
    Tonemap {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        key: Option<f64>,
        #[arg(long)]
        l_white: Option<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = 8)]
        bits: u32,
    },
    /// PSNR/SSIM of predicted stacks (or radiance maps) against references.
    Evaluate {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long = "ref")]
        reference: PathBuf,
        /// Table file; printed to stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write the well-exposedness mask of a PNG as a grayscale PNG.
    MaskDump {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        gamma: Option<f64>,
        #[arg(long, value_parser = parse_variant)]
        variant: Option<MaskVariant>,
    },
}

fn parse_method(s: &str) -> std::result::Result<MergeMethod, String> {
    match s {
        "debevec-weighted" => Ok(MergeMethod::DebevecWeighted),
        "robertson-ml" => Ok(MergeMethod::RobertsonMl),
        _ => Err("expected debevec-weighted or robertson-ml".into()),
    }
}

fn parse_variant(s: &str) -> std::result::Result<MaskVariant, String> {
    match s {
        "min-combination" => Ok(MaskVariant::MinCombination),
        "paper-literal-max" => Ok(MaskVariant::PaperLiteralMax),
        _ => Err("expected min-combination or paper-literal-max".into()),
    }
}

/// Single-line error report: `error: kind=<kind> msg="..."`.
pub fn error_line(e: &Error) -> String {
    format!("error: kind={} msg={:?}", e.kind(), e.to_string())
}

/// Curve by name from a DoRF file, or a built-in `identity` / `gamma-<g>`.
pub fn resolve_curve(name: &str, dorf: Option<&Path>) -> Result<Crf> {
    if let Some(path) = dorf {
        return Ok(load_dorf(path, &CurveSelection::Names(vec![name.to_string()]))?.remove(0));
    }
    if name == "identity" {
        return Ok(Crf::identity());
    }
    match name.strip_prefix("gamma-").and_then(|g| g.parse::<f64>().ok()) {
        Some(g) if g > 0.0 => Ok(Crf::gamma(g)),
        _ => Err(Error::Config(format!(
            "curve `{name}` is not built in; pass a DoRF file"
        ))),
    }
}

fn manifest_path(p: &Path) -> PathBuf {
    if p.is_dir() {
        p.join("manifest.tsv")
    } else {
        p.to_path_buf()
    }
}

fn base_dir(manifest: &Path) -> PathBuf {
    manifest.parent().map(Path::to_path_buf).unwrap_or_default()
}

/// Stacks of a manifest with their scene and curve labels.
pub fn load_labeled_stacks(path: &Path) -> Result<Vec<(String, String, ExposureStack)>> {
    let path = manifest_path(path);
    let m = Manifest::read(&path)?;
    let labels: Vec<(String, String)> = m
        .groups()
        .into_iter()
        .map(|(s, c, _)| (s.to_string(), c.to_string()))
        .collect();
    let stacks = m.load_stacks(&base_dir(&path))?;
    Ok(labels.into_iter().zip(stacks).map(|((s, c), st)| (s, c, st)).collect())
}

fn log_config(cfg: &RunConfig) {
    info!("resolved config:\n{}", cfg.to_toml());
}

fn is_hdr_path(p: &Path) -> bool {
    matches!(
        p.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref(),
        Some("hdr" | "pic" | "pfm")
    )
}

pub fn run(cli: Cli) -> Result<()> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if cli.seed.is_some() {
        cfg.seed = cli.seed;
    }
    let mut cfg = cfg.resolve();
    match cli.command {
        Command::SynthDataset {
            hdr_dir,
            out,
            dorf,
            curves,
            curve_names,
            evs,
            bits,
        } => {
            let s = &mut cfg.synth;
            s.dorf = dorf.or(s.dorf.take());
            s.curve_count = curves.or(s.curve_count);
            if !curve_names.is_empty() {
                s.curve_names = curve_names;
            }
            if let Some(e) = evs {
                s.evs = e;
            }
            s.bit_depth = bits.unwrap_or(s.bit_depth);
            log_config(&cfg);
            let s = &cfg.synth;
            let dorf = s
                .dorf
                .as_deref()
                .ok_or_else(|| Error::Config("synth-dataset needs --dorf or synth.dorf".into()))?;
            let selection = match (&s.curve_names[..], s.curve_count) {
                ([], None) => CurveSelection::All,
                ([], Some(n)) => CurveSelection::Count(n),
                (names, _) => CurveSelection::Names(names.to_vec()),
            };
            let crfs = load_dorf(dorf, &selection)?;
            let m = synth_dataset(&hdr_dir, &crfs, &s.evs, BitDepth::from_bits(s.bit_depth)?, &out)?;
            info!("wrote {} images in {} stacks", m.rows.len(), m.groups().len());
            Ok(())
        }
        Command::Train {
            manifest,
            out,
            steps,
            resume,
        } => {
            let mpath = manifest_path(&manifest);
            let stacks = Manifest::read(&mpath)?.load_stacks(&base_dir(&mpath))?;
            let mut state = match resume {
                Some(p) => {
                    let mut st = TrainState::from_checkpoint(&load_checkpoint(&p)?)?;
                    if let Some(n) = steps {
                        st.config.max_steps = n;
                    }
                    cfg.train = st.config.clone();
                    info!("resuming from {} at step {}", p.display(), st.step);
                    st
                }
                None => {
                    if let Some(n) = steps {
                        cfg.train.max_steps = n;
                    }
                    TrainState::new(cfg.train.clone())?
                }
            };
            log_config(&cfg);
            std::fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
            let cfg_path = out.join("config.toml");
            std::fs::write(&cfg_path, cfg.to_toml()).map_err(|e| Error::io(&cfg_path, e))?;
            let ck = fit(&mut state, &stacks, &out)?;
            info!("finished at step {}", ck.step);
            Ok(())
        }
        Command::InferStack {
            input,
            weights,
            evs,
            input_ev,
            out,
            scene_id,
            bits,
        } => {
            let inf = &mut cfg.infer;
            if let Some(e) = evs {
                inf.evs = e;
            }
            inf.input_ev = input_ev.unwrap_or(inf.input_ev);
            inf.bit_depth = bits.or(inf.bit_depth);
            let ck = load_checkpoint(&weights)?;
            if inf.mask.is_none() {
                inf.mask = ck
                    .extra
                    .as_ref()
                    .and_then(|x| x.get("train"))
                    .and_then(|t| t.get("mask"))
                    .and_then(|m| serde_json::from_value::<MaskConfig>(m.clone()).ok());
            }
            log_config(&cfg);
            let inf = &cfg.infer;
            let model = ck.to_model()?;
            let (pixels, in_depth) = read_ldr(&input)?;
            let depth = inf.bit_depth.map(BitDepth::from_bits).transpose()?.unwrap_or(in_depth);
            let stem = input
                .file_stem()
                .and_then(|s| s.to_str())
                .map(slug)
                .unwrap_or_else(|| "image".into());
            let scene = scene_id.unwrap_or_else(|| stem.clone());
            let ldr = LdrImage {
                pixels,
                meta: ExposureMeta::from_ev(inf.input_ev),
                crf_name: None,
                bit_depth: in_depth,
            };
            let mask = inf.mask.unwrap_or_default();
            let stack = generate_stack(&model, &ldr, &inf.evs, &mask, &scene)?;
            let out_dir = out.unwrap_or_else(|| input.parent().map(Path::to_path_buf).unwrap_or_default());
            let mpath = out_dir.join("manifest.tsv");
            let mut manifest = if mpath.exists() {
                Manifest::read(&mpath)?
            } else {
                Manifest::default()
            };
            manifest.rows.retain(|r| r.scene_id != scene);
            for img in stack.images() {
                let name = format!("{stem}_{}.png", ev_tag(img.ev()));
                write_ldr(out_dir.join(&name), &img.pixels, depth)?;
                manifest.rows.push(ManifestRow {
                    scene_id: scene.clone(),
                    crf_name: GENERATED_CURVE.into(),
                    ev: img.ev(),
                    path: name.into(),
                    bit_depth: depth,
                });
            }
            manifest.write(&mpath)?;
            info!("wrote {} exposures to {}", stack.len(), out_dir.display());
            Ok(())
        }
        Command::MergeHdr {
            manifest,
            out,
            dorf,
            curve,
            method,
            format,
        } => {
            let m = &mut cfg.merge;
            m.dorf = dorf.or(m.dorf.take());
            m.curve = curve.or(m.curve.take());
            m.method = method.unwrap_or(m.method);
            log_config(&cfg);
            if !matches!(format.as_str(), "hdr" | "pfm") {
                return Err(Error::Invalid(format!("output format must be hdr or pfm, got `{format}`")));
            }
            let m = &cfg.merge;
            for (scene, crf_name, stack) in load_labeled_stacks(&manifest)? {
                let name = m.curve.as_deref().unwrap_or(&crf_name);
                let crf = resolve_curve(name, m.dorf.as_deref())?;
                let merged = merge(&stack, &crf, &m.merge_config())?;
                if merged.fallback_count() > 0 {
                    warn!("{scene}/{crf_name}: {} pixels used the fallback exposure", merged.fallback_count());
                }
                let path = out.join(format!("{}.{format}", slug(&format!("{scene}__{crf_name}"))));
                write_hdr(&path, &merged.radiance)?;
                info!("wrote {}", path.display());
            }
            Ok(())
        }
        Command::Tonemap {
            input,
            key,
            l_white,
            out,
            bits,
        } => {
            let t = &mut cfg.tonemap;
            t.key_a = key.unwrap_or(t.key_a);
            t.l_white = l_white.or(t.l_white);
            log_config(&cfg);
            let e = read_hdr(&input)?;
            let ldr = tonemap_reinhard(&e, &cfg.tonemap)?;
            let out = out.unwrap_or_else(|| input.with_extension("png"));
            write_ldr(&out, &ldr.pixels, BitDepth::from_bits(bits)?)?;
            info!("wrote {}", out.display());
            Ok(())
        }
        Command::Evaluate { pred, reference, out } => {
            log_config(&cfg);
            let ev = &cfg.evaluate;
            let table = if is_hdr_path(&pred) && is_hdr_path(&reference) {
                let h = evaluate_hdr(&read_hdr(&pred)?, &read_hdr(&reference)?, &ev.tonemap, &ev.ssim)?;
                format!(
                    "tm_psnr\ttm_ssim\tlinear_psnr\n{:.4}\t{:.6}\t{:.4}\n",
                    h.tm_psnr, h.tm_ssim, h.linear_psnr
                )
            } else {
                format_metric_table(&stack_metrics(&pred, &reference, &ev.ssim)?)
            };
            match out {
                Some(p) => std::fs::write(&p, &table).map_err(|e| Error::io(&p, e))?,
                None => print!("{table}"),
            }
            Ok(())
        }
        Command::MaskDump {
            input,
            out,
            gamma,
            variant,
        } => {
            let mut mask = cfg.train.mask;
            mask.gamma = gamma.unwrap_or(mask.gamma);
            mask.variant = variant.unwrap_or(mask.variant);
            mask.validate()?;
            cfg.train.mask = mask;
            log_config(&cfg);
            let (img, _) = read_ldr(&input)?;
            let m = well_exposed_mask(&img, &mask);
            let (w, h) = m.dims();
            write_gray_png(&out, w, h, m.values())
        }
    }
}

/// Per-scene, per-EV metrics of predicted stacks against reference stacks.
///
/// Each predicted stack is matched to the reference with the same scene id
/// (and the same curve when several exist); the reference is restricted to the
/// predicted EVs.
pub fn stack_metrics(pred: &Path, reference: &Path, p: &crate::quality::SsimParams) -> Result<Vec<MetricRow>> {
    let preds = load_labeled_stacks(pred)?;
    let refs = load_labeled_stacks(reference)?;
    let mut rows = Vec::new();
    for (scene, crf, ps) in &preds {
        let cands: Vec<&(String, String, ExposureStack)> = refs.iter().filter(|(s, _, _)| s == scene).collect();
        let r = match cands.iter().find(|(_, c, _)| c == crf) {
            Some(r) => *r,
            None if cands.len() == 1 => cands[0],
            None if cands.is_empty() => {
                return Err(Error::Invalid(format!("no reference stack for scene `{scene}`")))
            }
            None => {
                return Err(Error::Invalid(format!(
                    "scene `{scene}` has {} reference stacks; label predictions with the curve name",
                    cands.len()
                )))
            }
        };
        let rs = &r.2;
        let picked = ps
            .evs()
            .iter()
            .map(|&ev| {
                rs.at_ev(ev).cloned().ok_or_else(|| Error::EvMismatch {
                    pred: ps.evs(),
                    reference: rs.evs(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let sub = ExposureStack::new(rs.scene_id(), picked)?;
        for m in evaluate_stacks(ps, &sub, p)? {
            rows.push(MetricRow {
                scene: scene.clone(),
                ev: m.ev,
                psnr: m.psnr,
                ssim: m.ssim,
            });
        }
    }
    Ok(rows)
}
