//! Coupled MSP + DMSP runs on synthetic Bernoulli-Gaussian instances.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use log::info;

use crate::data::{make_instance, write_matrix_bin, write_matrix_csv};
use crate::error::Result;
use crate::harness::config::{ExperimentConfig, InitPolicy};
use crate::learner::{Dmsp, MetricsTrace, Warning, TRACE_CSV_HEADER};
use crate::matrix::{random_orthogonal, Matrix};
use crate::network::TimeVaryingNetwork;
use crate::rng::{derive_seed, seeded};

const NETWORK_TAG: u64 = 1;
const INIT_TAG: u64 = 2;

#[derive(Debug, Clone, PartialEq)]
pub struct TrialSummary {
    pub trial: usize,
    pub seed: u64,
    /// max_i recovery error of the DMSP nodes after the last iteration.
    pub final_max_error: f64,
    pub msp_error: f64,
    pub final_delta: f64,
    pub disconnected_windows: usize,
    pub degenerate_projections: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthOutcome {
    pub traces: Vec<MetricsTrace>,
    pub trials: Vec<TrialSummary>,
}

impl SynthOutcome {
    pub fn mean_final_error(&self) -> f64 {
        mean(self.trials.iter().map(|t| t.final_max_error))
    }

    /// Standard error of the mean final error.
    pub fn final_error_sem(&self) -> f64 {
        let k = self.trials.len() as f64;
        if k < 2.0 {
            return 0.0;
        }
        let m = self.mean_final_error();
        let var = self
            .trials
            .iter()
            .map(|t| (t.final_max_error - m).powi(2))
            .sum::<f64>()
            / (k - 1.0);
        (var / k).sqrt()
    }

    pub fn mean_msp_error(&self) -> f64 {
        mean(self.trials.iter().map(|t| t.msp_error))
    }
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, count) = values.fold((0.0, 0usize), |(s, c), v| (s + v, c + 1));
    sum / count as f64
}

/// Starting dictionary for a trial.
pub fn initial_dictionary(n: usize, init: InitPolicy, trial_seed: u64) -> Matrix {
    match init {
        InitPolicy::Identity => Matrix::identity(n, n),
        InitPolicy::Random => random_orthogonal(n, &mut seeded(derive_seed(trial_seed, INIT_TAG))),
    }
}

/// Runs `trials` independent experiments; trial k uses seed `seed + k` for
/// its instance and seeds derived from it for the network and the start.
pub fn run_synth(cfg: &ExperimentConfig) -> Result<SynthOutcome> {
    cfg.validate()?;
    let mut outcome = SynthOutcome {
        traces: Vec::with_capacity(cfg.trials),
        trials: Vec::with_capacity(cfg.trials),
    };
    for trial in 0..cfg.trials {
        let trial_seed = cfg.seed.wrapping_add(trial as u64);
        let inst = make_instance(cfg.n, cfg.p, cfg.theta, cfg.nodes, &mut seeded(trial_seed))?;
        let net = TimeVaryingNetwork::new(
            cfg.nodes,
            cfg.edge_prob,
            cfg.directed,
            derive_seed(trial_seed, NETWORK_TAG),
        )?;
        let a0 = initial_dictionary(cfg.n, cfg.init, trial_seed);
        if trial == 0 {
            dump_artifacts(cfg, &inst.dictionary, &inst.observations, &net)?;
        }
        let blocks = inst.local_blocks();
        let (_, trace) = Dmsp::new(&blocks, &net, cfg.iters, cfg.tc)
            .truth(&inst.dictionary)
            .coupled(&inst.observations)
            .timing(cfg.timing)
            .run(&a0)?;
        let last = trace.last().expect("trace holds the initial state");
        let summary = TrialSummary {
            trial,
            seed: trial_seed,
            final_max_error: last.max_recovery_error.unwrap_or(f64::NAN),
            msp_error: last
                .msp
                .as_ref()
                .and_then(|m| m.recovery_error)
                .unwrap_or(f64::NAN),
            final_delta: last.delta.unwrap_or(f64::NAN),
            disconnected_windows: count(&trace, |w| matches!(w, Warning::DisconnectedWindow { .. })),
            degenerate_projections: count(&trace, |w| matches!(w, Warning::DegenerateProjection { .. })),
        };
        info!(
            "trial {trial}: DMSP max error {:.4}%, MSP error {:.4}%",
            100.0 * summary.final_max_error,
            100.0 * summary.msp_error
        );
        outcome.traces.push(trace);
        outcome.trials.push(summary);
    }
    Ok(outcome)
}

fn count(trace: &MetricsTrace, pred: impl Fn(&Warning) -> bool) -> usize {
    trace.warnings.iter().filter(|w| pred(w)).count()
}

fn dump_artifacts(
    cfg: &ExperimentConfig,
    dictionary: &Matrix,
    observations: &Matrix,
    net: &TimeVaryingNetwork,
) -> Result<()> {
    if let Some(dir) = &cfg.dump_instance {
        fs::create_dir_all(dir)?;
        write_matrix_csv(dictionary, &dir.join("dictionary.csv"))?;
        write_matrix_bin(observations, &dir.join("observations.bin"))?;
    }
    if let Some(dir) = &cfg.dump_weights {
        fs::create_dir_all(dir)?;
        for t in 0..cfg.iters {
            for s in 1..=cfg.tc {
                net.weights(t, s)
                    .write_csv(&dir.join(format!("weights_t{t}_s{s}.csv")))?;
            }
        }
    }
    Ok(())
}

pub const SUMMARY_CSV_HEADER: &str =
    "trial,seed,final_max_recovery_error,msp_recovery_error,final_delta,disconnected_windows,degenerate_projections";

/// Per-iteration rows of every trial, prefixed with the trial index.
pub fn write_trace_csv<W: Write>(outcome: &SynthOutcome, mut out: W) -> Result<()> {
    writeln!(out, "trial,{TRACE_CSV_HEADER}")?;
    for (k, trace) in outcome.traces.iter().enumerate() {
        trace.write_csv_rows(&mut out, Some(&k.to_string()))?;
    }
    Ok(())
}

/// One row per trial followed by a `mean` row.
pub fn write_summary_csv<W: Write>(outcome: &SynthOutcome, mut out: W) -> Result<()> {
    writeln!(out, "{SUMMARY_CSV_HEADER}")?;
    for t in &outcome.trials {
        writeln!(
            out,
            "{},{},{},{},{},{},{}",
            t.trial,
            t.seed,
            t.final_max_error,
            t.msp_error,
            t.final_delta,
            t.disconnected_windows,
            t.degenerate_projections
        )?;
    }
    writeln!(
        out,
        "mean,,{},{},{},,",
        outcome.mean_final_error(),
        outcome.mean_msp_error(),
        mean(outcome.trials.iter().map(|t| t.final_delta))
    )?;
    Ok(())
}

/// `trace.csv` → `trace_summary.csv`.
pub fn summary_path(out: &Path) -> PathBuf {
    let stem = out.file_stem().and_then(|s| s.to_str()).unwrap_or("trace");
    out.with_file_name(format!("{stem}_summary.csv"))
}

/// Writes the trace to `cfg.out` and the summary next to it.
pub fn write_outputs(cfg: &ExperimentConfig, outcome: &SynthOutcome) -> Result<PathBuf> {
    let mut w = BufWriter::new(File::create(&cfg.out)?);
    write_trace_csv(outcome, &mut w)?;
    w.flush()?;
    let summary = summary_path(&cfg.out);
    let mut w = BufWriter::new(File::create(&summary)?);
    write_summary_csv(outcome, &mut w)?;
    w.flush()?;
    Ok(summary)
}
