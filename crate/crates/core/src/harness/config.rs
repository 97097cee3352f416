//! Flat `key = value` experiment configuration.
//!
//! A file sets any subset of the keys below; command-line flags are applied
//! afterwards through the same [`ExperimentConfig::set`] path, so both
//! sources accept identical spellings.
//!
//! ```text
//! # synthetic run
//! n = 25
//! p = 10000
//! theta = 0.1
//! nodes = 36
//! edge_prob = 0.2
//! iters = 15
//! tc = 3
//! directed = true
//! ```

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Synth,
    Denoise,
    TheoryCheck,
}

impl FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "synth" => Ok(Mode::Synth),
            "denoise" => Ok(Mode::Denoise),
            "theory-check" => Ok(Mode::TheoryCheck),
            _ => Err(format!("unknown mode `{s}`")),
        }
    }
}

/// Starting dictionary shared by all nodes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum InitPolicy {
    Identity,
    /// Haar-distributed, seeded from the trial seed.
    #[default]
    Random,
}

impl FromStr for InitPolicy {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "identity" => Ok(InitPolicy::Identity),
            "random" => Ok(InitPolicy::Random),
            _ => Err(format!("expected `identity` or `random`, got `{s}`")),
        }
    }
}

impl fmt::Display for InitPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            InitPolicy::Identity => "identity",
            InitPolicy::Random => "random",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub mode: Mode,
    pub n: usize,
    pub p: usize,
    pub theta: f64,
    pub nodes: usize,
    pub edge_prob: f64,
    pub iters: usize,
    pub tc: usize,
    pub directed: bool,
    pub trials: usize,
    pub seed: u64,
    pub init: InitPolicy,
    pub out: PathBuf,
    pub timing: bool,
    pub dump_instance: Option<PathBuf>,
    pub dump_weights: Option<PathBuf>,
    /// Clean reference image for denoising.
    pub image: Option<PathBuf>,
    pub variance: f64,
    pub patch: usize,
    /// Coefficients with |c| ≤ threshold·σ are zeroed.
    pub threshold: f64,
    pub mean_removal: bool,
    pub fast: bool,
    /// Where to write the noisy input image, if anywhere.
    pub noisy_out: Option<PathBuf>,
    pub grid: String,
}

impl ExperimentConfig {
    pub fn synth() -> Self {
        Self {
            mode: Mode::Synth,
            n: 25,
            p: 10_000,
            theta: 0.1,
            nodes: 36,
            edge_prob: 0.2,
            iters: 15,
            tc: 3,
            directed: false,
            trials: 5,
            seed: 42,
            init: InitPolicy::Random,
            out: PathBuf::from("trace.csv"),
            timing: false,
            dump_instance: None,
            dump_weights: None,
            image: None,
            variance: 0.0025,
            patch: 8,
            threshold: 3.0,
            mean_removal: true,
            fast: false,
            noisy_out: None,
            grid: "default".into(),
        }
    }

    /// Denoising defaults: one static undirected network with edge
    /// probability 0.5, 30 iterations, 2 consensus rounds.
    pub fn denoise() -> Self {
        Self {
            mode: Mode::Denoise,
            n: 64,
            edge_prob: 0.5,
            iters: 30,
            tc: 2,
            trials: 1,
            out: PathBuf::from("denoised.pgm"),
            ..Self::synth()
        }
    }

    pub fn theory_check() -> Self {
        Self {
            mode: Mode::TheoryCheck,
            trials: 500,
            out: PathBuf::from("checks.csv"),
            ..Self::synth()
        }
    }

    pub fn defaults(mode: Mode) -> Self {
        match mode {
            Mode::Synth => Self::synth(),
            Mode::Denoise => Self::denoise(),
            Mode::TheoryCheck => Self::theory_check(),
        }
    }

    /// Sets one key from its textual value.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        match key {
            "mode" => self.mode = parse("mode", value)?,
            "n" => self.n = parse("n", value)?,
            "p" => self.p = parse("p", value)?,
            "theta" => self.theta = parse("theta", value)?,
            "nodes" | "N" => self.nodes = parse("nodes", value)?,
            "edge_prob" | "P" => self.edge_prob = parse("edge_prob", value)?,
            "iters" | "T" => self.iters = parse("iters", value)?,
            "tc" | "T_c" => self.tc = parse("tc", value)?,
            "directed" => self.directed = parse_bool("directed", value)?,
            "trials" => self.trials = parse("trials", value)?,
            "seed" => self.seed = parse("seed", value)?,
            "init" => self.init = parse("init", value)?,
            "out" => self.out = PathBuf::from(value),
            "timing" => self.timing = parse_bool("timing", value)?,
            "dump_instance" => self.dump_instance = Some(PathBuf::from(value)),
            "dump_weights" => self.dump_weights = Some(PathBuf::from(value)),
            "image" => self.image = Some(PathBuf::from(value)),
            "variance" => self.variance = parse("variance", value)?,
            "patch" => self.patch = parse("patch", value)?,
            "threshold" => self.threshold = parse("threshold", value)?,
            "mean_removal" => self.mean_removal = parse_bool("mean_removal", value)?,
            "fast" => self.fast = parse_bool("fast", value)?,
            "noisy_out" => self.noisy_out = Some(PathBuf::from(value)),
            "grid" => self.grid = value.to_string(),
            _ => {
                return Err(Error::InvalidParameter {
                    field: "config",
                    reason: format!("unknown key `{key}`"),
                })
            }
        }
        Ok(())
    }

    /// Applies every `key = value` line of `text`. Blank lines and lines
    /// starting with `#` are skipped.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::Config {
                    line: idx + 1,
                    reason: format!("expected `key = value`, got `{line}`"),
                });
            };
            self.set(key.trim(), value).map_err(|e| Error::Config {
                line: idx + 1,
                reason: e.to_string(),
            })?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path)?;
        self.apply_text(&text)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |field: &'static str, v: usize| {
            if v == 0 {
                Err(Error::invalid(field, "must be positive"))
            } else {
                Ok(())
            }
        };
        positive("n", self.n)?;
        positive("p", self.p)?;
        positive("nodes", self.nodes)?;
        positive("trials", self.trials)?;
        positive("patch", self.patch)?;
        if self.theta.is_nan() || self.theta <= 0.0 || self.theta >= 1.0 {
            return Err(Error::invalid("theta", format!("{} is outside (0, 1)", self.theta)));
        }
        if !(0.0..=1.0).contains(&self.edge_prob) {
            return Err(Error::invalid(
                "edge_prob",
                format!("{} is outside [0, 1]", self.edge_prob),
            ));
        }
        match self.mode {
            Mode::Synth => {
                if self.nodes > self.p {
                    return Err(Error::invalid(
                        "nodes",
                        format!("{} nodes exceed {} samples", self.nodes, self.p),
                    ));
                }
            }
            Mode::Denoise => {
                if self.variance.is_nan() || self.variance <= 0.0 {
                    return Err(Error::invalid("variance", "must be positive"));
                }
                if self.threshold.is_nan() || self.threshold < 0.0 {
                    return Err(Error::invalid("threshold", "must be non-negative"));
                }
                if self.image.is_none() {
                    return Err(Error::invalid("image", "a clean input image is required"));
                }
            }
            Mode::TheoryCheck => {
                if self.grid != "default" && self.grid != "quick" {
                    return Err(Error::invalid(
                        "grid",
                        format!("expected `default` or `quick`, got `{}`", self.grid),
                    ));
                }
            }
        }
        Ok(())
    }
}

fn parse<T: FromStr>(field: &'static str, value: &str) -> Result<T>
where
    T::Err: fmt::Display,
{
    value
        .parse()
        .map_err(|e: T::Err| Error::invalid(field, format!("`{value}`: {e}")))
}

fn parse_bool(field: &'static str, value: &str) -> Result<bool> {
    match value {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        _ => Err(Error::invalid(field, format!("`{value}` is not a boolean"))),
    }
}
