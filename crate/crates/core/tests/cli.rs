//! The binary against the same compositions done through library calls.

mod common;

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use hdrbracket::brackets::generate_stack;
use hdrbracket::cli::{load_labeled_stacks, stack_metrics, GENERATED_CURVE};
use hdrbracket::hdr_recon::{merge, tonemap_reinhard, MergeConfig, TonemapParams};
use hdrbracket::imaging::{synth_dataset, BitDepth, CurveSelection, ExposureMeta, LdrImage};
use hdrbracket::io::manifest::Manifest;
use hdrbracket::io::{read_hdr, read_ldr, write_hdr, write_ldr};
use hdrbracket::masking::{well_exposed_mask, MaskConfig};
use hdrbracket::model::{build_model, save_checkpoint, Checkpoint, NetConfig};
use hdrbracket::quality::{format_metric_table, SsimParams};
use hdrbracket::RgbImage;

fn bin(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hdrbracket"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = bin(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn quantized(img: &RgbImage, depth: BitDepth) -> RgbImage {
    img.map(|v| depth.quantize(v))
}

fn hdr_dir(root: &Path) -> PathBuf {
    let dir = root.join("hdr");
    std::fs::create_dir_all(&dir).unwrap();
    write_hdr(dir.join("a.pfm"), &common::scene(0, 24, 16)).unwrap();
    write_hdr(dir.join("b.pfm"), &common::scene(1, 24, 16)).unwrap();
    dir
}

#[test]
fn synth_dataset_matches_library() {
    let root = tempfile::tempdir().unwrap();
    let src = hdr_dir(root.path());
    let cli_out = root.path().join("cli");
    ok(&[
        "synth-dataset",
        "--hdr-dir",
        s(&src),
        "--out",
        s(&cli_out),
        "--dorf",
        s(&common::dorf_path()),
        "--curves",
        "2",
        "--evs",
        "-1,0,1",
        "--bits",
        "16",
    ]);
    let lib_out = root.path().join("lib");
    let crfs = hdrbracket::imaging::load_dorf(common::dorf_path(), &CurveSelection::Count(2)).unwrap();
    let m = synth_dataset(&src, &crfs, &[-1.0, 0.0, 1.0], BitDepth::Sixteen, &lib_out).unwrap();
    assert_eq!(m.rows.len(), 2 * 2 * 3);
    let a = std::fs::read(cli_out.join("manifest.tsv")).unwrap();
    assert_eq!(a, std::fs::read(lib_out.join("manifest.tsv")).unwrap());
    for row in &m.rows {
        assert_eq!(
            std::fs::read(cli_out.join(&row.path)).unwrap(),
            std::fs::read(lib_out.join(&row.path)).unwrap()
        );
    }
}

#[test]
fn tonemap_matches_library() {
    let root = tempfile::tempdir().unwrap();
    let input = root.path().join("scene.hdr");
    write_hdr(&input, &common::scene(0, 20, 12)).unwrap();
    let out = root.path().join("tm.png");
    ok(&["tonemap", "--in", s(&input), "--key", "0.18", "--out", s(&out)]);
    let (got, depth) = read_ldr(&out).unwrap();
    assert_eq!(depth, BitDepth::Eight);
    let want = tonemap_reinhard(&read_hdr(&input).unwrap(), &TonemapParams::default()).unwrap();
    assert_eq!(got, quantized(&want.pixels, BitDepth::Eight));
    assert!(got.data().iter().all(|v| (0.0..=1.0).contains(v)));
}

fn write_weights(root: &Path) -> PathBuf {
    let model = build_model::<f32>(&NetConfig::toy(), 5).unwrap();
    let path = root.join("w.hdrb");
    save_checkpoint(&path, &Checkpoint::from_model(&model, 0)).unwrap();
    path
}

#[test]
fn infer_stack_matches_library() {
    let root = tempfile::tempdir().unwrap();
    let weights = write_weights(root.path());
    let img = RgbImage::from_fn(20, 12, |x, y| [x as f64 / 19.0, y as f64 / 11.0, 0.4]).map(|v| BitDepth::Sixteen.quantize(v));
    let input = root.path().join("shot.png");
    write_ldr(&input, &img, BitDepth::Sixteen).unwrap();
    let out = root.path().join("gen");
    ok(&["infer-stack", "--input", s(&input), "--evs", "-2,-1,0,1,2", "--weights", s(&weights), "--out", s(&out)]);

    let model = Checkpoint::from_bytes(&std::fs::read(&weights).unwrap()).unwrap().to_model().unwrap();
    let ldr = LdrImage {
        pixels: img.clone(),
        meta: ExposureMeta::from_ev(0.0),
        crf_name: None,
        bit_depth: BitDepth::Sixteen,
    };
    let want = generate_stack(&model, &ldr, &[-2.0, -1.0, 0.0, 1.0, 2.0], &MaskConfig::default(), "shot").unwrap();
    for (tag, w) in ["ev-2.00", "ev-1.00", "ev+0.00", "ev+1.00", "ev+2.00"].iter().zip(want.images()) {
        let (got, _) = read_ldr(out.join(format!("shot_{tag}.png"))).unwrap();
        assert_eq!(got, quantized(&w.pixels, BitDepth::Sixteen), "{tag}");
    }
    let (mid, _) = read_ldr(out.join("shot_ev+0.00.png")).unwrap();
    assert_eq!(mid, img);
    let m = Manifest::read(out.join("manifest.tsv")).unwrap();
    assert_eq!(m.rows.len(), 5);
    assert!(m.rows.iter().all(|r| r.scene_id == "shot" && r.crf_name == GENERATED_CURVE));

    ok(&["infer-stack", "--input", s(&input), "--evs", "0,1", "--weights", s(&weights), "--out", s(&out)]);
    assert_eq!(Manifest::read(out.join("manifest.tsv")).unwrap().rows.len(), 2);
}

#[test]
fn merge_and_evaluate_match_library() {
    let root = tempfile::tempdir().unwrap();
    let src = hdr_dir(root.path());
    let data = root.path().join("data");
    let crf = common::curve("synthetic-gamma-2.2");
    synth_dataset(&src, &[crf.clone()], &[-2.0, 0.0, 2.0], BitDepth::Sixteen, &data).unwrap();
    let merged = root.path().join("merged");
    ok(&[
        "merge-hdr",
        "--manifest",
        s(&data.join("manifest.tsv")),
        "--out",
        s(&merged),
        "--dorf",
        s(&common::dorf_path()),
        "--format",
        "pfm",
    ]);
    for (scene, crf_name, stack) in load_labeled_stacks(&data).unwrap() {
        let want = merge(&stack, &crf, &MergeConfig::default()).unwrap();
        let got = read_hdr(merged.join(format!("{scene}__{crf_name}.pfm"))).unwrap();
        let want32 = want.radiance.pixels().map(|v| v as f32 as f64);
        assert_eq!(got.pixels(), &want32);
    }

    let table = root.path().join("table.tsv");
    ok(&["evaluate", "--pred", s(&data), "--ref", s(&data), "--out", s(&table)]);
    let rows = stack_metrics(&data, &data, &SsimParams::default()).unwrap();
    assert_eq!(std::fs::read_to_string(&table).unwrap(), format_metric_table(&rows));
    assert!(rows.iter().all(|r| r.psnr == 99.0));

    let a = merged.join("a__synthetic-gamma-2.2.pfm");
    let out = ok(&["evaluate", "--pred", s(&a), "--ref", s(&a)]);
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.starts_with("tm_psnr\ttm_ssim\tlinear_psnr\n99.0000\t1.000000\t99.0000"), "{text}");
}

#[test]
fn evaluate_rejects_missing_evs() {
    let root = tempfile::tempdir().unwrap();
    let src = hdr_dir(root.path());
    let crf = common::curve("synthetic-gamma-2.2");
    let (p, r) = (root.path().join("p"), root.path().join("r"));
    synth_dataset(&src, &[crf.clone()], &[0.0, 3.0], BitDepth::Eight, &p).unwrap();
    synth_dataset(&src, &[crf], &[0.0, 1.0], BitDepth::Eight, &r).unwrap();
    let out = bin(&["evaluate", "--pred", s(&p), "--ref", s(&r)]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("error: kind=ev_mismatch"));
}

#[test]
fn mask_dump_matches_library() {
    let root = tempfile::tempdir().unwrap();
    let img = RgbImage::from_fn(16, 8, |x, y| [x as f64 / 15.0, y as f64 / 7.0, 0.5]).map(|v| BitDepth::Eight.quantize(v));
    let input = root.path().join("in.png");
    write_ldr(&input, &img, BitDepth::Eight).unwrap();
    let out = root.path().join("mask.png");
    ok(&["mask-dump", "--input", s(&input), "--out", s(&out), "--variant", "paper-literal-max"]);
    let cfg = MaskConfig {
        variant: hdrbracket::masking::MaskVariant::PaperLiteralMax,
        ..Default::default()
    };
    let m = well_exposed_mask(&img, &cfg);
    let bytes = std::fs::read(&out).unwrap();
    let decoder = png::Decoder::new(std::io::Cursor::new(bytes));
    let mut reader = decoder.read_info().unwrap();
    let mut buf = vec![0; reader.output_buffer_size().unwrap()];
    reader.next_frame(&mut buf).unwrap();
    let want: Vec<u8> = m.values().iter().map(|v| (v * 255.0).round() as u8).collect();
    assert_eq!(&buf[..want.len()], &want[..]);
}

#[test]
fn errors_are_single_machine_lines() {
    let out = bin(&["no-such-command"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));

    let out = bin(&["tonemap", "--in", "/definitely/missing.hdr"]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8(out.stderr).unwrap();
    let line = err.lines().last().unwrap();
    assert!(line.starts_with("error: kind=io msg=\""), "{line}");

    let root = tempfile::tempdir().unwrap();
    let cfg = root.path().join("bad.toml");
    std::fs::write(&cfg, "[train]\nlearning_rat = 0.1\n").unwrap();
    let out = bin(&["--config", s(&cfg), "tonemap", "--in", "x.hdr"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("error: kind=config"));

    let txt = root.path().join("x.txt");
    std::fs::write(&txt, "x").unwrap();
    let out = bin(&["tonemap", "--in", s(&txt)]);
    assert!(String::from_utf8_lossy(&out.stderr).contains("error: kind=codec"));
}

#[test]
fn train_resume_continues_the_metrics_log() {
    let root = tempfile::tempdir().unwrap();
    let src = hdr_dir(root.path());
    let data = root.path().join("data");
    synth_dataset(&src, &[common::curve("synthetic-srgb")], &[-1.0, 0.0, 1.0], BitDepth::Sixteen, &data).unwrap();
    let cfg = root.path().join("run.toml");
    std::fs::write(
        &cfg,
        "seed = 3\n[train]\nbatch_size = 2\ncrop_size = 16\ncheckpoint_every = 0\n\
         [train.net]\nlevels = 3\nbase_features_encoder = 4\nbase_features_exposure = 4\n",
    )
    .unwrap();
    let manifest = data.join("manifest.tsv");
    let (full, part) = (root.path().join("full"), root.path().join("part"));
    let train = |out: &Path, steps: &str| {
        ok(&["--config", s(&cfg), "train", "--manifest", s(&manifest), "--out", s(out), "--steps", steps]);
    };
    train(&full, "6");
    train(&part, "3");
    ok(&[
        "train",
        "--manifest",
        s(&manifest),
        "--out",
        s(&part),
        "--steps",
        "6",
        "--resume",
        s(&part.join("latest.hdrb")),
    ]);
    let a = std::fs::read_to_string(full.join("metrics.tsv")).unwrap();
    let b = std::fs::read_to_string(part.join("metrics.tsv")).unwrap();
    assert_eq!(a.lines().count(), 7);
    assert_eq!(a, b);
    assert!(full.join("config.toml").exists());
}
