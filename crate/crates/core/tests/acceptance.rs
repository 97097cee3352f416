//! Acceptance criteria. Runs as a plain binary and prints one line per
//! criterion; exits nonzero if any criterion fails.

use std::path::Path;
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use dmsp_core::data::make_instance;
use dmsp_core::harness::{denoise_clean, run_synth, ExperimentConfig, GrayImage};
use dmsp_core::learner::{dmsp_run, msp_run, msp_run_tracked};
use dmsp_core::matrix::{random_orthogonal, Matrix};
use dmsp_core::network::{consensus_round, gen_er_snapshot, metropolis_weights, push_weights, TimeVaryingNetwork};
use dmsp_core::rng::seeded;
use dmsp_core::theory::{default_grid, run_grid};
use rand::Rng;
use rand_distr::StandardNormal;

const EQUIVALENCE_TOL: f64 = 1e-8;
const WITH_CONSENSUS_MAX: f64 = 0.005;
const WITHOUT_CONSENSUS_MIN: f64 = 0.10;
const MSP_MAX: f64 = 0.005;
const CONTRACTION_FRACTION: f64 = 0.90;
const STOCHASTIC_TOL: f64 = 1e-12;
const CONSERVATION_TOL: f64 = 1e-9;
const MONOTONE_SLACK: f64 = 1e-9;
const NOISY_PSNR: f64 = 26.0;
const NOISY_PSNR_TOL: f64 = 0.2;
const PSNR_GAIN: f64 = 2.0;

type Criterion = (&'static str, fn() -> Outcome);

struct Outcome {
    pass: bool,
    detail: String,
}

fn within(limit: Duration, elapsed: Duration) -> (bool, String) {
    (elapsed <= limit, format!("{:.2}s of {}s", elapsed.as_secs_f64(), limit.as_secs()))
}

fn synth_cfg(tc: usize) -> ExperimentConfig {
    ExperimentConfig {
        n: 25,
        p: 10_000,
        theta: 0.1,
        nodes: 36,
        edge_prob: 0.2,
        iters: 15,
        tc,
        directed: true,
        trials: 5,
        seed: 42,
        ..ExperimentConfig::synth()
    }
}

fn perfect_consensus() -> Outcome {
    let start = Instant::now();
    let inst = make_instance(25, 10_000, 0.1, 36, &mut seeded(1)).unwrap();
    let net = TimeVaryingNetwork::new(36, 1.0, false, 2).unwrap();
    let a0 = random_orthogonal(25, &mut seeded(3));
    let (_, trace) = dmsp_run(&inst, &net, 15, 1, &a0).unwrap();
    let worst = trace.deltas().into_iter().fold(0.0, f64::max);
    let (fast, time) = within(Duration::from_secs(5), start.elapsed());
    Outcome {
        pass: worst <= EQUIVALENCE_TOL && trace.records.len() == 16 && fast,
        detail: format!("max_t δ = {worst:e} (≤ {EQUIVALENCE_TOL:e}), {time}"),
    }
}

fn recovery_grid() -> Outcome {
    let start = Instant::now();
    let with = run_synth(&synth_cfg(3)).unwrap().mean_final_error();
    let without = run_synth(&synth_cfg(0)).unwrap().mean_final_error();
    let (fast, time) = within(Duration::from_secs(30), start.elapsed());
    Outcome {
        pass: with <= WITH_CONSENSUS_MAX && without >= WITHOUT_CONSENSUS_MIN && fast,
        detail: format!(
            "T_c=3: {:.3}% (≤ 0.5%), T_c=0: {:.2}% (≥ 10%), {time}",
            100.0 * with,
            100.0 * without
        ),
    }
}

fn msp_headline() -> Outcome {
    let start = Instant::now();
    let inst = make_instance(25, 10_000, 0.1, 36, &mut seeded(42)).unwrap();
    let a0 = random_orthogonal(25, &mut seeded(43));
    let (_, trace) = msp_run_tracked(&inst.observations, 15, &a0, Some(&inst.dictionary), false);
    let err = trace.last().unwrap().max_recovery_error.unwrap();
    let (fast, time) = within(Duration::from_secs(2), start.elapsed());
    Outcome {
        pass: err <= MSP_MAX && fast,
        detail: format!("recovery error {:.3}% (≤ 0.5%), {time}", 100.0 * err),
    }
}

fn linear_contraction() -> Outcome {
    let mut steps = 0;
    let mut decreasing = 0;
    let mut tails = Vec::new();
    for trial in 0..5 {
        let seed = 100 + trial;
        let inst = make_instance(25, 10_000, 0.1, 36, &mut seeded(seed)).unwrap();
        let net = TimeVaryingNetwork::new(36, 0.2, true, seed + 1000).unwrap();
        let a0 = random_orthogonal(25, &mut seeded(seed + 2000));
        let (_, trace) = dmsp_run(&inst, &net, 15, 3, &a0).unwrap();
        let deltas: Vec<f64> = trace.deltas().into_iter().filter(|d| *d > 1e-12).collect();
        let tail = &deltas[deltas.len().saturating_sub(8)..];
        for w in tail.windows(2) {
            steps += 1;
            decreasing += usize::from(w[1] < w[0]);
        }
        tails.push(format!("{:.3}→{:.3}", tail[0], tail[tail.len() - 1]));
    }
    let frac = decreasing as f64 / steps as f64;
    Outcome {
        pass: frac >= CONTRACTION_FRACTION,
        detail: format!(
            "{decreasing}/{steps} tail steps decrease ({:.0}%, need ≥ 90%); δ tails {}",
            100.0 * frac,
            tails.join(", ")
        ),
    }
}

fn theory_suite() -> Outcome {
    let start = Instant::now();
    let reports = run_grid(&default_grid(), 500, 7).unwrap();
    let violations: usize = reports.iter().map(|r| r.violations).sum();
    let worst = reports
        .iter()
        .filter(|r| r.evaluated > 0)
        .map(|r| r.worst_margin)
        .fold(f64::INFINITY, f64::min);
    let (fast, time) = within(Duration::from_secs(60), start.elapsed());
    Outcome {
        pass: violations == 0 && fast,
        detail: format!(
            "{} grid points, {violations} violations, worst margin {worst:e}, {time}",
            reports.len()
        ),
    }
}

fn weight_invariants() -> Outcome {
    let mut rng = seeded(5);
    let mut failures = 0;
    for k in 0..2000 {
        let directed = k % 2 == 1;
        let nodes = rng.random_range(1..=40);
        let prob = rng.random::<f64>();
        let g = gen_er_snapshot(nodes, prob, directed, &mut rng);
        let w = if directed { push_weights(&g) } else { metropolis_weights(&g) };
        let m = w.as_matrix();
        let mut ok = (0..nodes).all(|j| (m.column(j).sum() - 1.0).abs() <= STOCHASTIC_TOL);
        ok &= (0..nodes).all(|i| (0..nodes).all(|j| (m[(i, j)] > 0.0) == (i == j || g.has_edge(j, i))));
        if !directed {
            ok &= m == &m.transpose();
            ok &= (0..nodes).all(|i| (m.row(i).sum() - 1.0).abs() <= STOCHASTIC_TOL);
        }
        failures += usize::from(!ok);
    }
    Outcome {
        pass: failures == 0,
        detail: format!("1000 Metropolis + 1000 push snapshots, {failures} failures"),
    }
}

fn consensus_conservation() -> Outcome {
    let mut rng = seeded(6);
    let mut worst: f64 = 0.0;
    for k in 0..1000 {
        let nodes = rng.random_range(1..=40);
        let g = gen_er_snapshot(nodes, rng.random::<f64>(), k % 2 == 0, &mut rng);
        let w = if g.is_directed() { push_weights(&g) } else { metropolis_weights(&g) };
        let values: Vec<Matrix> = (0..nodes)
            .map(|_| Matrix::from_fn(4, 3, |_, _| rng.sample(StandardNormal)))
            .collect();
        let before = values.iter().fold(Matrix::zeros(4, 3), |a, v| a + v);
        let after = consensus_round(&values, &w)
            .unwrap()
            .iter()
            .fold(Matrix::zeros(4, 3), |a, v| a + v);
        worst = worst.max((&before - &after).norm() / before.norm());
    }
    Outcome {
        pass: worst <= CONSERVATION_TOL,
        detail: format!("worst relative drift {worst:e} over 1000 rounds"),
    }
}

fn objective_monotone() -> Outcome {
    let mut violations = 0;
    for seed in 0..5 {
        let inst = make_instance(25, 10_000, 0.1, 1, &mut seeded(seed)).unwrap();
        let a0 = random_orthogonal(25, &mut seeded(seed + 50));
        let (_, trace) = msp_run(&inst.observations, 15, &a0);
        for w in trace.msp_objectives().windows(2) {
            violations += usize::from(w[1] < w[0] * (1.0 - MONOTONE_SLACK));
        }
    }
    Outcome {
        pass: violations == 0,
        detail: format!("{violations} decreases over 5 seeds × 15 iterations"),
    }
}

fn denoising() -> Outcome {
    let start = Instant::now();
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("data/camera.pgm");
    let clean = GrayImage::read_pgm(&path).unwrap();
    let cfg = ExperimentConfig {
        image: Some(path),
        variance: 0.0025,
        iters: 30,
        tc: 2,
        nodes: 36,
        seed: 42,
        fast: true,
        ..ExperimentConfig::denoise()
    };
    let report = denoise_clean(&clean, &cfg).unwrap();
    let (input, output) = (report.input_psnr.unwrap(), report.output_psnr.unwrap());
    let (fast, time) = within(Duration::from_secs(300), start.elapsed());
    Outcome {
        pass: (input - NOISY_PSNR).abs() <= NOISY_PSNR_TOL && output >= input + PSNR_GAIN && fast,
        detail: format!("corrupted {input:.2} dB, denoised {output:.2} dB, {time}"),
    }
}

fn reproducibility() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let run = |name: &str| -> Vec<u8> {
        let out = dir.path().join(name);
        let status = Command::new(env!("CARGO_BIN_EXE_dmsp"))
            .args(["synth", "--n", "10", "--p", "2000", "--nodes", "8", "--iters", "8"])
            .args(["--tc", "2", "--trials", "2", "--seed", "42", "--directed", "--out"])
            .arg(&out)
            .output()
            .unwrap()
            .status;
        assert!(status.success());
        std::fs::read(out).unwrap()
    };
    let (a, b) = (run("a.csv"), run("b.csv"));
    Outcome {
        pass: !a.is_empty() && a == b,
        detail: format!("{} bytes, identical: {}", a.len(), a == b),
    }
}

fn main() -> ExitCode {
    let criteria: [Criterion; 10] = [
        ("perfect-consensus equivalence", perfect_consensus),
        ("recovery with and without consensus", recovery_grid),
        ("MSP headline error", msp_headline),
        ("linear contraction of δ", linear_contraction),
        ("theory-check suite", theory_suite),
        ("weight-matrix invariants", weight_invariants),
        ("consensus conservation", consensus_conservation),
        ("objective monotonicity", objective_monotone),
        ("denoising", denoising),
        ("reproducibility", reproducibility),
    ];
    let mut failed = 0;
    for (k, (name, check)) in criteria.iter().enumerate() {
        let outcome = check();
        let verdict = if outcome.pass { "PASS" } else { "FAIL" };
        println!("criterion {:>2} {verdict}: {name}: {}", k + 1, outcome.detail);
        failed += usize::from(!outcome.pass);
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
