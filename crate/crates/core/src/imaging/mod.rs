//! Physical image formation: response curves, exposure simulation, and
//! synthetic bracket generation.

pub mod crf;
pub mod dataset;
pub mod exposure;

pub use crf::{load_dorf, parse_dorf, Crf, CurveSelection};
pub use dataset::{synth_dataset, DEFAULT_EVS};
pub use exposure::{
    simulate_ldr, synth_stack, BitDepth, ExposureMeta, ExposureStack, LdrImage, RadianceMap,
};
