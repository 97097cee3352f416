//! Experiment drivers behind the `dmsp` binary.

pub mod config;
pub mod denoise;
pub mod image;
pub mod synth;

pub use config::{ExperimentConfig, InitPolicy, Mode};
pub use denoise::{denoise, denoise_clean, DenoiseReport};
pub use image::{add_noise, extract_patches, psnr, reconstruct, GrayImage, Patches};
pub use synth::{run_synth, SynthOutcome, TrialSummary};
