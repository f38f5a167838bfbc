//! End-to-end acceptance criteria. Each test prints one PASS/FAIL line.

mod common;

use std::io::Write;
use std::path::Path;
use std::process::Command;
use std::sync::{Mutex, OnceLock};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use hdrbracket::brackets::generate_stack;
use hdrbracket::hdr_recon::{merge, reinhard_curve, MergeConfig};
use hdrbracket::imaging::{synth_stack, BitDepth, CurveSelection, ExposureStack, RadianceMap};
use hdrbracket::io::manifest::{Manifest, ManifestRow};
use hdrbracket::io::write_ldr;
use hdrbracket::losses::{
    hdr_term, l1_term, perceptual_term, transformation_term, tv_term, FeatureExtractor, STAGES,
};
use hdrbracket::masking::{well_exposed_mask, MaskConfig, MaskVariant};
use hdrbracket::model::{build_model, encoder_head, exposure_head, Direction, ModelWeights, NetConfig};
use hdrbracket::nn::Tensor;
use hdrbracket::quality::{psnr, psnr_from_mse, ssim, SsimParams, PSNR_CAP};
use hdrbracket::trainer::{make_batch, train_step, TrainConfig, TrainState};
use hdrbracket::RgbImage;

/// Training-heavy criteria run one at a time so their timings are honest.
static HEAVY: Mutex<()> = Mutex::new(());

const SMOKE_STEPS: u64 = 1000;
const SMOKE_PATIENCE: u64 = 50;
const SMOKE_BN_MOMENTUM: f64 = 0.01;
const SMOKE_BUDGET_S: f64 = 900.0;
const ABLATION_STEPS: u64 = 60;

fn report(id: u32, name: &str, pass: bool, detail: &str) {
    let verdict = if pass { "PASS" } else { "FAIL" };
    let line = format!("acceptance {id:>2} {name}: {verdict} ({detail})\n");
    let _ = std::io::stderr().write_all(line.as_bytes());
}

fn heavy() -> std::sync::MutexGuard<'static, ()> {
    HEAVY.lock().unwrap_or_else(|e| e.into_inner())
}

fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()) + 1e-10
}

#[test]
fn c01_oracle_round_trip() {
    let t0 = Instant::now();
    let evs: Vec<f64> = (-4..=4).map(f64::from).collect();
    let (w, h) = (96, 64);
    let e = RadianceMap::new(RgbImage::from_fn(w, h, |x, y| {
        let u = x as f64 / (w - 1) as f64;
        let v = y as f64 / (h - 1) as f64;
        let l = (0.01f64.ln() + u * (200.0f64.ln() - 0.01f64.ln())).exp();
        [l * (0.8 + 0.3 * v), l, l * (1.2 - 0.4 * v)]
    }))
    .unwrap();
    let mut worst = 0.0f64;
    let mut used = 0usize;
    for crf in common::dorf_curves(7) {
        let stack = synth_stack(&e, &evs, &crf, BitDepth::Sixteen, "oracle").unwrap();
        let out = merge(&stack, &crf, &MergeConfig::default()).unwrap();
        let pairs: Vec<(f64, f64)> = out
            .radiance
            .pixels()
            .pixels()
            .zip(e.pixels().pixels())
            .zip(&out.fallback)
            .filter(|(_, &fb)| !fb)
            .flat_map(|((m, s), _)| (0..3).map(move |c| (m[c], s[c])))
            .collect();
        let mut ratios: Vec<f64> = pairs.iter().map(|(m, s)| m / s).collect();
        ratios.sort_by(f64::total_cmp);
        let k = ratios[ratios.len() / 2];
        let err = pairs.iter().map(|(m, s)| (m / (k * s) - 1.0).abs()).fold(0.0, f64::max);
        worst = worst.max(err);
        used += pairs.len();
    }
    let secs = t0.elapsed().as_secs_f64();
    let pass = worst <= 0.005 && used > 0 && secs < 30.0;
    report(1, "oracle round trip", pass, &format!("max rel err {worst:.2e} over {used} samples, {secs:.1}s"));
    assert!(pass);
}

#[test]
fn c02_crf_inversion() {
    let curves = hdrbracket::imaging::load_dorf(common::dorf_path(), &CurveSelection::Count(5)).unwrap();
    assert_eq!(curves.len(), 5);
    let mut worst = 0.0f64;
    let mut checked = 0usize;
    for crf in &curves {
        let xs = crf.samples_x();
        let segs: Vec<(f64, f64)> = crf.increasing_segments().map(|i| (xs[i], xs[i + 1])).collect();
        for i in 0..10_000 {
            let x = i as f64 / 9999.0;
            if !segs.iter().any(|&(a, b)| x > a && x < b) {
                continue;
            }
            worst = worst.max((crf.invert(crf.apply(x)) - x).abs());
            checked += 1;
        }
    }
    let pass = worst <= 2.0 / 1024.0 && checked > 0;
    report(2, "crf inversion", pass, &format!("max error {worst:.2e} over {checked} points"));
    assert!(pass);
}

fn random_tensor(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> Tensor<f64> {
    let data = (0..48).map(|_| rng.random_range(lo..hi)).collect();
    Tensor::from_vec([1, 3, 4, 4], data).unwrap()
}

/// Worst elementwise relative gap between `analytic` and central differences of `f`.
fn fd_gap(f: &dyn Fn(&Tensor<f64>) -> f64, x: &Tensor<f64>, analytic: &Tensor<f64>) -> f64 {
    let h = 1e-6;
    let mut worst = 0.0f64;
    for i in 0..x.len() {
        let mut p = x.clone();
        p.data_mut()[i] += h;
        let mut m = x.clone();
        m.data_mut()[i] -= h;
        let num = (f(&p) - f(&m)) / (2.0 * h);
        let a = analytic.data()[i];
        let gap = (a - num).abs() / (a.abs().max(num.abs()) + 1e-10);
        if (a - num).abs() > 1e-10 {
            worst = worst.max(gap);
        }
    }
    worst
}

#[test]
fn c03_loss_correctness() {
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let eps = 1e-6;
    let r = [2.0];
    let x1 = random_tensor(&mut rng, 0.05, 0.45);
    let x2 = random_tensor(&mut rng, 0.1, 0.9);
    let gt = random_tensor(&mut rng, 0.0, 1.0);
    let pred = random_tensor(&mut rng, 0.0, 1.0);
    let exact = x1.map(|v| v * 2.0);
    let fx = FeatureExtractor::<f64>::seeded_random(11);
    let stages: Vec<String> = STAGES.iter().map(|s| s.to_string()).collect();
    let idx = fx.stage_indices(&stages).unwrap();

    let zeros = [
        ("L_t", transformation_term(&x1, &exact, &r, eps).unwrap().0),
        ("L_h", hdr_term(&x1, &exact, &r, eps).unwrap().0),
        ("L_r", l1_term(&gt, &gt).unwrap().0),
        ("L_p", perceptual_term(&fx, &idx, &gt, &gt, false).0),
        ("L_tv", tv_term(&Tensor::<f64>::full([1, 3, 4, 4], 0.4)).0),
    ];
    let zero_ok = zeros.iter().all(|(_, v)| v.abs() < 1e-9);

    let (_, t1, t2) = transformation_term(&x1, &x2, &r, eps).unwrap();
    let (_, h1, h2) = hdr_term(&x1, &x2, &r, eps).unwrap();
    let (_, dr) = l1_term(&pred, &gt).unwrap();
    let dp = perceptual_term(&fx, &idx, &pred, &gt, true).1.unwrap();
    let (_, dtv) = tv_term(&pred);
    let gaps = [
        ("L_t/x1", fd_gap(&|t| transformation_term(t, &x2, &r, eps).unwrap().0, &x1, &t1)),
        ("L_t/x2", fd_gap(&|t| transformation_term(&x1, t, &r, eps).unwrap().0, &x2, &t2)),
        ("L_h/x1", fd_gap(&|t| hdr_term(t, &x2, &r, eps).unwrap().0, &x1, &h1)),
        ("L_h/x2", fd_gap(&|t| hdr_term(&x1, t, &r, eps).unwrap().0, &x2, &h2)),
        ("L_r", fd_gap(&|t| l1_term(t, &gt).unwrap().0, &pred, &dr)),
        ("L_p", fd_gap(&|t| perceptual_term(&fx, &idx, t, &gt, false).0, &pred, &dp)),
        ("L_tv", fd_gap(&|t| tv_term(t).0, &pred, &dtv)),
    ];
    let worst = gaps.iter().map(|g| g.1).fold(0.0, f64::max);
    let secs = t0.elapsed().as_secs_f64();
    let pass = zero_ok && worst <= 1e-4 && secs < 60.0;
    report(
        3,
        "loss correctness",
        pass,
        &format!("zeros {zeros:?}; worst relative gradient gap {worst:.2e} {gaps:?}; {secs:.1}s"),
    );
    assert!(pass);
}

fn scale_params(model: &mut ModelWeights<f32>, gain: f32) {
    for (_, p) in model.params_mut() {
        p.value.iter_mut().for_each(|v| *v *= gain);
    }
}

fn in_unit(t: &Tensor<f32>) -> bool {
    t.data().iter().all(|v| (0.0..=1.0).contains(v))
}

#[test]
fn c04_head_contracts() {
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let cfg = NetConfig::toy();
    let mut violations = 0usize;
    for draw in 0..1000u64 {
        let mut model = build_model::<f32>(&cfg, draw).unwrap();
        scale_params(&mut model, rng.random_range(0.1f32..10.0));
        let img = Tensor::from_vec([1, 3, 8, 8], (0..192).map(|_| rng.random_range(0.0f32..=1.0)).collect()).unwrap();
        let enc = model.encode_tensor(&img);
        let scaled = enc.map(|v| v * 4.0);
        let up = model.expose_tensor(&scaled, Direction::Up);
        let down = model.expose_tensor(&enc.map(|v| v * 0.25), Direction::Down);
        let big = Tensor::from_vec([1, 3, 8, 8], (0..192).map(|_| rng.random_range(0.0f32..=4.0)).collect()).unwrap();
        let up_big = model.expose_tensor(&big, Direction::Up);
        let mag = 10f32.powi(rng.random_range(-2..=30));
        let f = Tensor::from_vec([1, 3, 8, 8], (0..192).map(|_| rng.random_range(-mag..mag)).collect()).unwrap();
        let (eh, _) = encoder_head(&f, &img);
        let (xh, _) = exposure_head(&f);
        if ![&enc, &up, &down, &up_big, &eh, &xh].iter().all(|t| in_unit(t)) {
            violations += 1;
        }
    }
    let secs = t0.elapsed().as_secs_f64();
    let pass = violations == 0 && secs < 60.0;
    report(4, "head contracts", pass, &format!("{violations} of 1000 draws left [0,1], {secs:.1}s"));
    assert!(pass);
}

struct Smoke {
    model: ModelWeights<f32>,
    mask: MaskConfig,
    stacks: Vec<ExposureStack>,
    initial: f64,
    final_mean: f64,
    psnr: Vec<Vec<f64>>,
    secs: f64,
}

fn smoke_config() -> TrainConfig {
    let mut cfg = common::smoke_config(SMOKE_STEPS);
    cfg.plateau_patience = SMOKE_PATIENCE;
    cfg.net.bn_momentum = SMOKE_BN_MOMENTUM;
    cfg
}

fn run_smoke(cfg: &TrainConfig, stacks: &[ExposureStack]) -> (TrainState, Vec<f64>) {
    let mut state = TrainState::new(cfg.clone()).unwrap();
    let fx = cfg.loss.extractor::<f32>().unwrap();
    let stages = fx.stage_indices(&cfg.loss.vgg_layers).unwrap();
    let mut losses = Vec::new();
    while state.step < cfg.max_steps {
        let batch = make_batch::<f32>(stacks, cfg, state.step).unwrap();
        let (terms, _) = train_step(&mut state, &fx, &stages, &batch).unwrap();
        losses.push(terms.total);
    }
    (state, losses)
}

fn smoke() -> &'static Smoke {
    static SMOKE: OnceLock<Smoke> = OnceLock::new();
    SMOKE.get_or_init(|| {
        let _guard = heavy();
        let t0 = Instant::now();
        let stacks = common::smoke_stacks();
        let cfg = smoke_config();
        let (state, losses) = run_smoke(&cfg, &stacks);
        let tail = &losses[losses.len() - 50..];
        let psnr = stacks
            .iter()
            .map(|s| {
                let g = generate_stack(&state.model, s.at_ev(0.0).unwrap(), &common::SMOKE_EVS, &cfg.mask, "p").unwrap();
                common::SMOKE_EVS
                    .iter()
                    .map(|&ev| psnr(&g.at_ev(ev).unwrap().pixels, &s.at_ev(ev).unwrap().pixels, 1.0).unwrap())
                    .collect()
            })
            .collect();
        Smoke {
            model: state.model,
            mask: cfg.mask,
            stacks,
            initial: losses[0],
            final_mean: tail.iter().sum::<f64>() / tail.len() as f64,
            psnr,
            secs: t0.elapsed().as_secs_f64(),
        }
    })
}

#[test]
fn c05_overfit_smoke() {
    let s = smoke();
    let ratio = s.final_mean / s.initial;
    let min_psnr = s.psnr.iter().flatten().copied().fold(f64::INFINITY, f64::min);
    let pass = ratio <= 0.10 && min_psnr >= 30.0 && s.secs <= SMOKE_BUDGET_S;
    report(
        5,
        "overfit smoke",
        pass,
        &format!(
            "{SMOKE_STEPS} steps, loss {:.4} -> {:.4} (mean of last 50, ratio {ratio:.3}), min PSNR {min_psnr:.2} dB, per-EV {:?}, {:.0}s",
            s.initial,
            s.final_mean,
            s.psnr
                .iter()
                .map(|r| r.iter().map(|p| format!("{p:.1}")).collect::<Vec<_>>())
                .collect::<Vec<_>>(),
            s.secs
        ),
    );
    assert!(pass);
}

#[test]
fn c06_ev_monotonicity() {
    let s = smoke();
    let mut means = Vec::new();
    for st in &s.stacks {
        let g = generate_stack(&s.model, st.at_ev(0.0).unwrap(), &common::SMOKE_EVS, &s.mask, "m").unwrap();
        means.push(g.images().iter().map(|i| i.pixels.mean()).collect::<Vec<f64>>());
    }
    let pass = means.iter().all(|m| m.windows(2).all(|w| w[1] >= w[0]));
    report(6, "ev monotonicity", pass, &format!("stack means {means:?}"));
    assert!(pass);
}

#[test]
fn c07_ablation_plumbing() {
    let _guard = heavy();
    let stacks = common::smoke_stacks();
    let mut outcomes = Vec::new();
    for share in [true, false] {
        for lambda_h in [0.0, 1.0] {
            let mut cfg = common::smoke_config(ABLATION_STEPS);
            cfg.net.share_exposure_nets = share;
            cfg.loss.lambda_h = lambda_h;
            let result = std::panic::catch_unwind(|| {
                let (state, losses) = run_smoke(&cfg, &stacks);
                let g = generate_stack(&state.model, stacks[0].at_ev(0.0).unwrap(), &common::SMOKE_EVS, &cfg.mask, "a").unwrap();
                losses.iter().all(|l| l.is_finite()) && g.len() == 5
            });
            outcomes.push((share, lambda_h, matches!(result, Ok(true))));
        }
    }
    let pass = outcomes.iter().all(|o| o.2);
    report(7, "ablation plumbing", pass, &format!("(share, lambda_h, ok) {outcomes:?}, {ABLATION_STEPS} steps each"));
    assert!(pass);
}

#[test]
fn c08_metric_sanity() {
    let img = RgbImage::from_fn(24, 24, |x, y| [(x as f64 * 0.37).sin().abs(), (y as f64 * 0.21).cos().abs(), 0.5]);
    let cap = psnr(&img, &img, 1.0).unwrap();
    let twenty = psnr_from_mse(0.01, 1.0);
    let s = ssim(&img, &img, &SsimParams::default()).unwrap();
    let ld = reinhard_curve(1.0, f64::INFINITY);
    let pass = cap == PSNR_CAP && twenty == 20.0 && (s - 1.0).abs() <= 1e-9 && (ld - 0.5).abs() <= 1e-9;
    report(8, "metric sanity", pass, &format!("cap {cap}, mse 0.01 -> {twenty} dB, ssim {s}, L_d {ld}"));
    assert!(pass);
}

fn write_stacks(dir: &Path, stacks: &[ExposureStack]) -> std::path::PathBuf {
    let mut m = Manifest::default();
    for s in stacks {
        for img in s.images() {
            let rel = format!("{}/ev{:+.2}.png", s.scene_id(), img.ev());
            write_ldr(dir.join(&rel), &img.pixels, img.bit_depth).unwrap();
            m.rows.push(ManifestRow {
                scene_id: s.scene_id().to_string(),
                crf_name: s.crf_name().unwrap_or("unknown").to_string(),
                ev: img.ev(),
                path: rel.into(),
                bit_depth: img.bit_depth,
            });
        }
    }
    let path = dir.join("manifest.tsv");
    m.write(&path).unwrap();
    path
}

#[test]
fn c09_determinism() {
    let _guard = heavy();
    let dir = tempfile::tempdir().unwrap();
    let manifest = write_stacks(dir.path(), &common::smoke_stacks());
    let config = dir.path().join("run.toml");
    std::fs::write(
        &config,
        "seed = 21\n[train]\nbatch_size = 2\ncrop_size = 32\nlearning_rate = 0.001\ncheckpoint_every = 50\n\
         [train.net]\nlevels = 4\nbase_features_encoder = 8\nbase_features_exposure = 16\n",
    )
    .unwrap();
    let run = |name: &str| {
        let out = dir.path().join(name);
        let status = Command::new(env!("CARGO_BIN_EXE_hdrbracket"))
            .args(["train", "--steps", "100", "--config"])
            .arg(&config)
            .arg("--manifest")
            .arg(&manifest)
            .arg("--out")
            .arg(&out)
            .env("RUST_LOG", "warn")
            .status()
            .unwrap();
        assert!(status.success());
        std::fs::read(out.join("metrics.tsv")).unwrap()
    };
    let (a, b) = (run("a"), run("b"));
    let rows = String::from_utf8_lossy(&a).lines().count().saturating_sub(1);
    let pass = a == b && rows == 100;
    report(9, "determinism", pass, &format!("{rows} logged steps, logs identical: {}", a == b));
    assert!(pass);
}

fn brute_force_mask(y: f64, g: f64, variant: MaskVariant) -> f64 {
    let l1 = 1.0 - f64::max(0.0, (1.0 - g) - y) / (1.0 - g);
    let l2 = 1.0 - f64::max(0.0, y - g) / (1.0 - g);
    match variant {
        MaskVariant::PaperLiteralMax => l1.max(l2),
        MaskVariant::MinCombination => l1.min(l2),
    }
}

#[test]
fn c10_mask_formulas() {
    let g = 0.05;
    let boundary = [0.0, g, 0.5, 1.0 - g, 1.0];
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut grays: Vec<[f64; 3]> = boundary.iter().map(|&v| [v; 3]).collect();
    grays.extend((0..400).map(|_| [rng.random::<f64>(), rng.random::<f64>(), rng.random::<f64>()]));
    let img = RgbImage::from_fn(grays.len(), 1, |x, _| grays[x]);
    let mut worst = 0.0f64;
    for variant in [MaskVariant::MinCombination, MaskVariant::PaperLiteralMax] {
        let cfg = MaskConfig { gamma: g, variant };
        let m = well_exposed_mask(&img, &cfg);
        for (px, &got) in grays.iter().zip(m.values()) {
            let y = 0.299 * px[0] + 0.587 * px[1] + 0.114 * px[2];
            worst = worst.max((got - brute_force_mask(y, g, variant)).abs());
        }
        for &y in &boundary {
            worst = worst.max((cfg.lambda_dark(y) - (1.0 - f64::max(0.0, (1.0 - g) - y) / (1.0 - g))).abs());
            worst = worst.max((cfg.lambda_bright(y) - (1.0 - f64::max(0.0, y - g) / (1.0 - g))).abs());
        }
    }
    let mid = brute_force_mask(0.5, g, MaskVariant::MinCombination);
    let pass = worst <= 1e-7 && rel_close(mid, 0.5263, 1e-4);
    report(10, "mask formulas", pass, &format!("max deviation {worst:.1e}, mid-gray {mid:.4}"));
    assert!(pass);
}
