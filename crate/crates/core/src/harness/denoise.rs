//! Patch-based denoising with a dictionary learned by DMSP.
//!
//! The noisy image is cut into all overlapping k×k patches, DMSP learns an
//! orthogonal A on the patch matrix split across the nodes, coefficients
//! A·Y are hard-thresholded at `threshold·σ`, and the patches Aᵀ·C are
//! averaged back into an image.

use log::info;

use crate::error::Result;
use crate::harness::config::ExperimentConfig;
use crate::harness::image::{add_noise, extract_patches, psnr, reconstruct, GrayImage};
use crate::harness::synth::initial_dictionary;
use crate::learner::{Dmsp, MetricsTrace};
use crate::matrix::Matrix;
use crate::network::{SnapshotPolicy, TimeVaryingNetwork};
use crate::rng::{derive_seed, seeded};
use crate::data::even_partition;

const NOISE_TAG: u64 = 3;
const NETWORK_TAG: u64 = 1;

#[derive(Debug, Clone)]
pub struct DenoiseReport {
    pub noisy: GrayImage,
    pub denoised: GrayImage,
    /// PSNR of the noisy image against the clean one, when known.
    pub input_psnr: Option<f64>,
    pub output_psnr: Option<f64>,
    pub dictionary: Matrix,
    pub trace: MetricsTrace,
    pub training_patches: usize,
}

/// Learns a dictionary on the patches of `noisy` and returns the denoised
/// image with PSNRs measured against `clean`, if given.
pub fn denoise(
    noisy: &GrayImage,
    sigma: f64,
    cfg: &ExperimentConfig,
    clean: Option<&GrayImage>,
) -> Result<DenoiseReport> {
    assert!(sigma > 0.0, "noise level must be positive");
    let k = cfg.patch;
    let patches = extract_patches(noisy, k, cfg.mean_removal)?;
    let n = k * k;

    let stride = if cfg.fast { 4 } else { 1 };
    let train_idx: Vec<usize> = (0..patches.data.ncols()).step_by(stride).collect();
    let train = patches.data.select_columns(&train_idx);
    let blocks: Vec<Matrix> = even_partition(train.ncols(), cfg.nodes)?
        .into_iter()
        .map(|r| train.columns(r.start, r.len()).clone_owned())
        .collect();

    let net = TimeVaryingNetwork::new(cfg.nodes, cfg.edge_prob, false, derive_seed(cfg.seed, NETWORK_TAG))?
        .with_policy(SnapshotPolicy::Static);
    let a0 = initial_dictionary(n, cfg.init, cfg.seed);
    let (state, trace) = Dmsp::new(&blocks, &net, cfg.iters, cfg.tc)
        .timing(cfg.timing)
        .run(&a0)?;
    let a = state.dictionaries[0].clone();

    let mut coeffs = &a * &patches.data;
    let cut = cfg.threshold * sigma;
    coeffs.apply(|c| {
        if c.abs() <= cut {
            *c = 0.0;
        }
    });
    let denoised = reconstruct(&patches, &(a.transpose() * coeffs))?.clipped();

    let input_psnr = clean.map(|c| psnr(c, noisy)).transpose()?;
    let output_psnr = clean.map(|c| psnr(c, &denoised)).transpose()?;
    if let (Some(i), Some(o)) = (input_psnr, output_psnr) {
        info!("PSNR {i:.2} dB -> {o:.2} dB");
    }
    Ok(DenoiseReport {
        noisy: noisy.clone(),
        denoised,
        input_psnr,
        output_psnr,
        dictionary: a,
        trace,
        training_patches: train_idx.len(),
    })
}

/// Adds seeded noise of variance `cfg.variance` to `clean` and denoises it.
pub fn denoise_clean(clean: &GrayImage, cfg: &ExperimentConfig) -> Result<DenoiseReport> {
    let sigma = cfg.variance.sqrt();
    let noisy = add_noise(clean, sigma, &mut seeded(derive_seed(cfg.seed, NOISE_TAG)));
    denoise(&noisy, sigma, cfg, Some(clean))
}
