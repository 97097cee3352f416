use std::fs::File;
use std::io::BufWriter;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::error;

use dmsp_core::harness::{self, synth, ExperimentConfig, GrayImage, Mode};
use dmsp_core::theory;
use dmsp_core::Result;

#[derive(Parser)]
#[command(name = "dmsp", version, about = "Decentralized orthogonal dictionary learning")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Coupled MSP/DMSP runs on synthetic Bernoulli-Gaussian data.
    Synth(SynthArgs),
    /// Denoise a grayscale PGM image with a DMSP-learned patch dictionary.
    Denoise(DenoiseArgs),
    /// Numerical checks of the supporting inequalities.
    TheoryCheck(TheoryArgs),
}

#[derive(Args)]
struct Common {
    /// key = value file applied before the flags below.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SynthArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    p: Option<usize>,
    #[arg(long)]
    theta: Option<f64>,
    #[arg(long)]
    nodes: Option<usize>,
    #[arg(long)]
    edge_prob: Option<f64>,
    #[arg(long)]
    iters: Option<usize>,
    #[arg(long)]
    tc: Option<usize>,
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long)]
    directed: bool,
    /// identity | random
    #[arg(long)]
    init: Option<String>,
    /// Record wall-clock milliseconds in the trace.
    #[arg(long)]
    timing: bool,
    /// Directory for the first trial's dictionary and observations.
    #[arg(long)]
    dump_instance: Option<PathBuf>,
    /// Directory for the first trial's weight matrices.
    #[arg(long)]
    dump_weights: Option<PathBuf>,
}

#[derive(Args)]
struct DenoiseArgs {
    #[command(flatten)]
    common: Common,
    /// Clean reference image (binary PGM); noise is added with the seed.
    #[arg(long)]
    image: Option<PathBuf>,
    #[arg(long)]
    variance: Option<f64>,
    #[arg(long)]
    iters: Option<usize>,
    #[arg(long)]
    tc: Option<usize>,
    #[arg(long)]
    nodes: Option<usize>,
    #[arg(long)]
    edge_prob: Option<f64>,
    /// Threshold multiple of σ.
    #[arg(long)]
    threshold: Option<f64>,
    /// Keep patch means in the learned data.
    #[arg(long)]
    no_mean_removal: bool,
    /// Learn on every 4th patch.
    #[arg(long)]
    fast: bool,
    /// identity | random
    #[arg(long)]
    init: Option<String>,
    /// Also write the noisy input image.
    #[arg(long)]
    noisy_out: Option<PathBuf>,
}

#[derive(Args)]
struct TheoryArgs {
    #[command(flatten)]
    common: Common,
    /// default | quick
    #[arg(long)]
    grid: Option<String>,
    #[arg(long)]
    trials: Option<usize>,
}

/// Collects `(key, value)` pairs for the flags that were given.
#[derive(Default)]
struct Overrides(Vec<(&'static str, String)>);

impl Overrides {
    fn opt<T: ToString>(&mut self, key: &'static str, v: &Option<T>) -> &mut Self {
        if let Some(v) = v {
            self.0.push((key, v.to_string()));
        }
        self
    }

    fn path(&mut self, key: &'static str, v: &Option<PathBuf>) -> &mut Self {
        self.opt(key, &v.as_ref().map(|p| p.display().to_string()))
    }

    fn flag(&mut self, key: &'static str, on: bool, value: bool) -> &mut Self {
        if on {
            self.0.push((key, value.to_string()));
        }
        self
    }

    fn common(&mut self, c: &Common) -> &mut Self {
        self.opt("seed", &c.seed).path("out", &c.out)
    }
}

fn build(mode: Mode, config: &Option<PathBuf>, overrides: &Overrides) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::defaults(mode);
    if let Some(path) = config {
        cfg.apply_file(path)?;
        cfg.mode = mode;
    }
    for (k, v) in &overrides.0 {
        cfg.set(k, v)?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Synth(a) => {
            let mut o = Overrides::default();
            o.common(&a.common)
                .opt("n", &a.n)
                .opt("p", &a.p)
                .opt("theta", &a.theta)
                .opt("nodes", &a.nodes)
                .opt("edge_prob", &a.edge_prob)
                .opt("iters", &a.iters)
                .opt("tc", &a.tc)
                .opt("trials", &a.trials)
                .flag("directed", a.directed, true)
                .opt("init", &a.init)
                .flag("timing", a.timing, true)
                .path("dump_instance", &a.dump_instance)
                .path("dump_weights", &a.dump_weights);
            let cfg = build(Mode::Synth, &a.common.config, &o)?;
            let outcome = harness::run_synth(&cfg)?;
            let summary = synth::write_outputs(&cfg, &outcome)?;
            println!(
                "mean final max recovery error {:.4}% (sem {:.4}%), MSP {:.4}%",
                100.0 * outcome.mean_final_error(),
                100.0 * outcome.final_error_sem(),
                100.0 * outcome.mean_msp_error()
            );
            println!("trace: {}", cfg.out.display());
            println!("summary: {}", summary.display());
            Ok(true)
        }
        Command::Denoise(a) => {
            let mut o = Overrides::default();
            o.common(&a.common)
                .path("image", &a.image)
                .opt("variance", &a.variance)
                .opt("iters", &a.iters)
                .opt("tc", &a.tc)
                .opt("nodes", &a.nodes)
                .opt("edge_prob", &a.edge_prob)
                .opt("threshold", &a.threshold)
                .flag("mean_removal", a.no_mean_removal, false)
                .flag("fast", a.fast, true)
                .opt("init", &a.init)
                .path("noisy_out", &a.noisy_out);
            let cfg = build(Mode::Denoise, &a.common.config, &o)?;
            let clean = GrayImage::read_pgm(cfg.image.as_ref().expect("validated"))?;
            let report = harness::denoise_clean(&clean, &cfg)?;
            report.denoised.write_pgm(&cfg.out)?;
            if let Some(path) = &cfg.noisy_out {
                report.noisy.write_pgm(path)?;
            }
            println!(
                "input PSNR {:.2} dB, output PSNR {:.2} dB",
                report.input_psnr.unwrap_or(f64::NAN),
                report.output_psnr.unwrap_or(f64::NAN)
            );
            println!("denoised: {}", cfg.out.display());
            Ok(true)
        }
        Command::TheoryCheck(a) => {
            let mut o = Overrides::default();
            o.common(&a.common).opt("grid", &a.grid).opt("trials", &a.trials);
            let cfg = build(Mode::TheoryCheck, &a.common.config, &o)?;
            let grid = match cfg.grid.as_str() {
                "quick" => theory::quick_grid(),
                _ => theory::default_grid(),
            };
            let reports = theory::run_grid(&grid, cfg.trials, cfg.seed)?;
            theory::write_reports_csv(&reports, BufWriter::new(File::create(&cfg.out)?))?;
            let failed: Vec<_> = reports.iter().filter(|r| !r.passed()).collect();
            for r in &failed {
                error!(
                    "{} (n={}, ε={}) violated {} times, worst margin {:e}",
                    r.name, r.n, r.epsilon, r.violations, r.worst_margin
                );
            }
            println!(
                "{} checks, {} with violations; report: {}",
                reports.len(),
                failed.len(),
                cfg.out.display()
            );
            Ok(failed.is_empty())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
