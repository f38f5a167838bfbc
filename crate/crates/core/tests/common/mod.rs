#![allow(dead_code)]

use std::path::PathBuf;

use hdrbracket::imaging::{load_dorf, synth_stack, BitDepth, Crf, CurveSelection, ExposureStack, RadianceMap};
use hdrbracket::model::NetConfig;
use hdrbracket::trainer::{AugmentConfig, TrainConfig};
use hdrbracket::RgbImage;

pub fn data_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/data")
}

pub fn dorf_path() -> PathBuf {
    data_dir().join("dorf_synthetic.txt")
}

pub fn dorf_curves(count: usize) -> Vec<Crf> {
    load_dorf(dorf_path(), &CurveSelection::Count(count)).expect("fixture curves")
}

pub fn curve(name: &str) -> Crf {
    load_dorf(dorf_path(), &CurveSelection::Names(vec![name.to_string()]))
        .expect("fixture curve")
        .remove(0)
}

/// Smooth colored radiance field with a bright highlight and a dark corner.
pub fn scene(id: u32, w: usize, h: usize) -> RadianceMap {
    let f = id as f64;
    let img = RgbImage::from_fn(w, h, |x, y| {
        let u = x as f64 / (w - 1) as f64;
        let v = y as f64 / (h - 1) as f64;
        let base = 0.04 * (4.0 * (u + 0.6 * v + 0.3 * f)).exp();
        let (cx, cy) = (0.3 + 0.4 * f, 0.35 + 0.2 * f);
        let d2 = (u - cx).powi(2) + (v - cy).powi(2);
        let spot = 3.0 * (-d2 / 0.01).exp();
        let wave = 1.0 + 0.25 * (9.0 * u + 5.0 * f).sin() * (7.0 * v).cos();
        let e = (base + spot) * wave;
        [e * (0.9 + 0.2 * f), e, e * (1.1 - 0.2 * f)]
    });
    RadianceMap::new(img).expect("nonnegative scene")
}

pub const SMOKE_EVS: [f64; 5] = [-2.0, -1.0, 0.0, 1.0, 2.0];

/// Two 64×64 scenes rendered at EV −2..+2 through one fixture curve.
pub fn smoke_stacks() -> Vec<ExposureStack> {
    let crf = curve("synthetic-gamma-2.2");
    (0..2)
        .map(|i| synth_stack(&scene(i, 64, 64), &SMOKE_EVS, &crf, BitDepth::Sixteen, &format!("scene{i}")).unwrap())
        .collect()
}

/// Toy network, 64×64 crops, batch 4, EV 0 paired with each other EV (8 pairs over two stacks).
pub fn smoke_config(steps: u64) -> TrainConfig {
    TrainConfig {
        batch_size: 4,
        learning_rate: 1e-3,
        plateau_patience: 2000,
        crop_size: 64,
        max_steps: steps,
        seed: 7,
        checkpoint_every: 0,
        pair_anchor_ev: Some(0.0),
        net: NetConfig::toy(),
        augment: AugmentConfig {
            enabled: false,
            ..Default::default()
        },
        ..Default::default()
    }
}
