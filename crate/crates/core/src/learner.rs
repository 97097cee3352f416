//! MSP and DMSP iterations with their deviation metrics.
//!
//! MSP repeats A ← P_O(n)(4(AY)^∘3 Yᵀ). DMSP gives every node the same
//! starting point, lets node i compute the gradient on its own block Y_i,
//! runs a few consensus rounds on the gradients and projects each node's
//! mixed gradient. Because the gradient is a sum over columns and the
//! projection ignores positive scaling, perfect consensus reproduces MSP.

use std::fmt::Write as _;
use std::io::Write;
use std::time::Instant;

use log::warn;

use crate::error::{Error, Result};
use crate::matrix::{frobenius_distance, l4_norm4, mul_transpose, polar_project, Matrix, PolarFactor};
use crate::network::{consensus_average_tracked, TimeVaryingNetwork};
use crate::data::ProblemInstance;

/// 4 (A Y)^∘3 Yᵀ, the gradient of ‖AY‖₄⁴ with respect to A.
pub fn local_gradient(a: &Matrix, y: &Matrix) -> Matrix {
    gradient_and_objective(a, y).0
}

/// Gradient together with ‖AY‖₄⁴, sharing the product AY.
pub fn gradient_and_objective(a: &Matrix, y: &Matrix) -> (Matrix, f64) {
    assert_eq!(a.ncols(), y.nrows(), "local_gradient: A and Y do not conform");
    let mut ay = a * y;
    let mut objective = 0.0;
    for v in ay.iter_mut() {
        let sq = *v * *v;
        objective += sq * sq;
        *v *= sq;
    }
    let mut g = mul_transpose(&ay, y);
    g *= 4.0;
    (g, objective)
}

/// ‖AY‖₄⁴.
pub fn objective(a: &Matrix, y: &Matrix) -> f64 {
    l4_norm4(&(a * y))
}

/// |1 − ‖A D_o‖₄⁴ / n|; zero exactly when A D_o is a signed permutation.
///
/// The fourth powers are summed in sorted order, so the value depends only
/// on the multiset of entries of A D_o and is bit-identical for PA.
pub fn recovery_error(a: &Matrix, truth: &Matrix) -> f64 {
    let n = truth.ncols() as f64;
    let mut quartics: Vec<f64> = (a * truth).iter().map(|v| (v * v) * (v * v)).collect();
    quartics.sort_by(f64::total_cmp);
    (1.0 - quartics.iter().sum::<f64>() / n).abs()
}

/// Per-node dictionaries of a DMSP run.
#[derive(Debug, Clone, PartialEq)]
pub struct DmspState {
    pub dictionaries: Vec<Matrix>,
    /// Completed outer iterations.
    pub t: usize,
}

impl DmspState {
    /// All nodes start from the same orthogonal `a0`.
    pub fn new(nodes: usize, a0: &Matrix) -> Self {
        Self {
            dictionaries: vec![a0.clone(); nodes],
            t: 0,
        }
    }
}

/// δ = max_i ‖A − A_i‖_F against a coupled MSP iterate.
pub fn deviation_delta(a_msp: &Matrix, state: &DmspState) -> f64 {
    max_distance(&state.dictionaries, a_msp)
}

/// max_i ‖value_i − mean‖_F.
pub fn consensus_deviation(values_after: &[Matrix], exact_mean: &Matrix) -> f64 {
    max_distance(values_after, exact_mean)
}

fn max_distance(values: &[Matrix], center: &Matrix) -> f64 {
    values
        .iter()
        .map(|v| frobenius_distance(v, center))
        .fold(0.0, f64::max)
}

/// Non-fatal events raised during a run.
#[derive(Debug, Clone, PartialEq)]
pub enum Warning {
    /// A projected matrix had σ_min/σ_max below the uniqueness threshold.
    DegenerateProjection {
        t: usize,
        node: Option<usize>,
        ratio: f64,
    },
    /// The union of the snapshots of outer iteration `t` was not strongly
    /// connected.
    DisconnectedWindow { t: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct MspRecord {
    pub recovery_error: Option<f64>,
    pub objective: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NodeRecord {
    pub recovery_error: Option<f64>,
    /// ‖A^(t) − A_i^(t)‖_F (coupled runs only).
    pub delta: Option<f64>,
    /// ‖A_i^(t) − Ā^(t)‖_F, Ā the perfect-consensus iterate.
    pub delta_c: Option<f64>,
    /// Local objective ‖A_i Y_i‖₄⁴.
    pub objective: f64,
}

/// Metrics of the state after `t` outer iterations (t = 0 is the start).
#[derive(Debug, Clone, PartialEq)]
pub struct IterationRecord {
    pub t: usize,
    pub msp: Option<MspRecord>,
    pub nodes: Vec<NodeRecord>,
    pub max_recovery_error: Option<f64>,
    pub delta: Option<f64>,
    pub delta_c: Option<f64>,
    /// ‖Ā^(t) − A^(t)‖_F.
    pub delta_a: Option<f64>,
    pub wall_ms: Option<f64>,
}

impl IterationRecord {
    fn empty(t: usize) -> Self {
        Self {
            t,
            msp: None,
            nodes: Vec::new(),
            max_recovery_error: None,
            delta: None,
            delta_c: None,
            delta_a: None,
            wall_ms: None,
        }
    }
}

pub const TRACE_CSV_HEADER: &str = "t,node,recovery_error,delta,delta_c,objective,wall_ms";

#[derive(Debug, Clone, Default, PartialEq)]
pub struct MetricsTrace {
    pub records: Vec<IterationRecord>,
    pub warnings: Vec<Warning>,
}

impl MetricsTrace {
    pub fn last(&self) -> Option<&IterationRecord> {
        self.records.last()
    }

    /// MSP objective per recorded iteration.
    pub fn msp_objectives(&self) -> Vec<f64> {
        self.records
            .iter()
            .filter_map(|r| r.msp.as_ref().map(|m| m.objective))
            .collect()
    }

    /// δ^(t) per recorded iteration.
    pub fn deltas(&self) -> Vec<f64> {
        self.records.iter().filter_map(|r| r.delta).collect()
    }

    /// CSV with columns `t,node,recovery_error,delta,delta_c,objective,wall_ms`.
    /// The coupled MSP iterate appears as node `msp`; absent values are empty.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "{TRACE_CSV_HEADER}")?;
        self.write_csv_rows(&mut out, None)
    }

    /// Rows without header, each prefixed by `prefix,` when given.
    pub fn write_csv_rows<W: Write>(&self, out: &mut W, prefix: Option<&str>) -> Result<()> {
        let mut line = String::new();
        for r in &self.records {
            let wall = opt(r.wall_ms);
            if let Some(m) = &r.msp {
                line.clear();
                if let Some(p) = prefix {
                    let _ = write!(line, "{p},");
                }
                let _ = write!(
                    line,
                    "{},msp,{},,,{},{}",
                    r.t,
                    opt(m.recovery_error),
                    m.objective,
                    wall
                );
                writeln!(out, "{line}")?;
            }
            for (i, node) in r.nodes.iter().enumerate() {
                line.clear();
                if let Some(p) = prefix {
                    let _ = write!(line, "{p},");
                }
                let _ = write!(
                    line,
                    "{},{},{},{},{},{},{}",
                    r.t,
                    i,
                    opt(node.recovery_error),
                    opt(node.delta),
                    opt(node.delta_c),
                    node.objective,
                    wall
                );
                writeln!(out, "{line}")?;
            }
        }
        Ok(())
    }
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn project(z: &Matrix, t: usize, node: Option<usize>, warnings: &mut Vec<Warning>) -> Matrix {
    let PolarFactor { q, condition_ratio } = polar_project(z);
    if condition_ratio.is_nan() || condition_ratio < crate::matrix::DEGENERATE_RATIO {
        warnings.push(Warning::DegenerateProjection {
            t,
            node,
            ratio: condition_ratio,
        });
    }
    q
}

fn log_warnings(warnings: &[Warning]) {
    let degenerate: Vec<_> = warnings
        .iter()
        .filter_map(|w| match w {
            Warning::DegenerateProjection { t, ratio, .. } => Some((*t, *ratio)),
            _ => None,
        })
        .collect();
    if let Some(&(t, ratio)) = degenerate.first() {
        warn!(
            "{} degenerate projections, first at iteration {t} (ratio {ratio:e})",
            degenerate.len()
        );
    }
    let disconnected = warnings
        .iter()
        .filter(|w| matches!(w, Warning::DisconnectedWindow { .. }))
        .count();
    if disconnected > 0 {
        warn!("{disconnected} consensus windows were not strongly connected");
    }
}

/// MSP for `iters` iterations from `a0`; the trace holds the objective of
/// every iterate A^(0..=iters).
pub fn msp_run(y: &Matrix, iters: usize, a0: &Matrix) -> (Matrix, MetricsTrace) {
    msp_run_tracked(y, iters, a0, None, false)
}

/// MSP with optional recovery-error tracking against `truth`.
pub fn msp_run_tracked(
    y: &Matrix,
    iters: usize,
    a0: &Matrix,
    truth: Option<&Matrix>,
    timing: bool,
) -> (Matrix, MetricsTrace) {
    check_start(a0, y.nrows());
    let start = Instant::now();
    let mut trace = MetricsTrace::default();
    let mut a = a0.clone();
    for t in 0..=iters {
        let (grad, obj) = if t < iters {
            let (g, o) = gradient_and_objective(&a, y);
            (Some(g), o)
        } else {
            (None, objective(&a, y))
        };
        let mut rec = IterationRecord::empty(t);
        let err = truth.map(|d| recovery_error(&a, d));
        rec.msp = Some(MspRecord {
            recovery_error: err,
            objective: obj,
        });
        rec.max_recovery_error = err;
        rec.wall_ms = timing.then(|| start.elapsed().as_secs_f64() * 1e3);
        trace.records.push(rec);
        if let Some(g) = grad {
            a = project(&g, t + 1, None, &mut trace.warnings);
        }
    }
    log_warnings(&trace.warnings);
    (a, trace)
}

fn check_start(a0: &Matrix, n: usize) {
    assert!(
        a0.is_square() && a0.nrows() == n,
        "initial dictionary must be {n}×{n}"
    );
}

/// Configurable DMSP run over pre-split data blocks.
#[derive(Debug, Clone)]
pub struct Dmsp<'a> {
    blocks: &'a [Matrix],
    net: &'a TimeVaryingNetwork,
    iters: usize,
    rounds: usize,
    truth: Option<&'a Matrix>,
    reference: Option<&'a Matrix>,
    timing: bool,
}

impl<'a> Dmsp<'a> {
    /// `iters` outer iterations with `rounds` consensus rounds each.
    pub fn new(blocks: &'a [Matrix], net: &'a TimeVaryingNetwork, iters: usize, rounds: usize) -> Self {
        Self {
            blocks,
            net,
            iters,
            rounds,
            truth: None,
            reference: None,
            timing: false,
        }
    }

    /// Ground-truth dictionary D_o for recovery errors.
    pub fn truth(mut self, truth: &'a Matrix) -> Self {
        self.truth = Some(truth);
        self
    }

    /// Runs MSP on the concatenated data `full_y` in lockstep so that δ and
    /// δ_a can be reported.
    pub fn coupled(mut self, full_y: &'a Matrix) -> Self {
        self.reference = Some(full_y);
        self
    }

    pub fn timing(mut self, on: bool) -> Self {
        self.timing = on;
        self
    }

    pub fn run(&self, a0: &Matrix) -> Result<(DmspState, MetricsTrace)> {
        let nodes = self.net.nodes;
        if self.blocks.len() != nodes {
            return Err(Error::ShapeMismatch(format!(
                "{} data blocks for {nodes} nodes",
                self.blocks.len()
            )));
        }
        let n = a0.nrows();
        if let Some(bad) = self.blocks.iter().position(|b| b.nrows() != n) {
            return Err(Error::ShapeMismatch(format!(
                "block {bad} has {} rows, dictionary has {n}",
                self.blocks[bad].nrows()
            )));
        }
        check_start(a0, n);

        let start = Instant::now();
        let mut trace = MetricsTrace::default();
        let mut state = DmspState::new(nodes, a0);
        let mut msp = self.reference.map(|_| a0.clone());
        // Perfect-consensus iterate Ā^(t); equals A^(0) at the start.
        let mut consensus_iterate = a0.clone();

        for t in 0..=self.iters {
            let last = t == self.iters;
            let mut grads = Vec::with_capacity(nodes);
            let mut local_obj = Vec::with_capacity(nodes);
            for (a_i, y_i) in state.dictionaries.iter().zip(self.blocks) {
                if last {
                    local_obj.push(objective(a_i, y_i));
                } else {
                    let (g, o) = gradient_and_objective(a_i, y_i);
                    grads.push(g);
                    local_obj.push(o);
                }
            }
            let msp_step = match (&msp, self.reference) {
                (Some(a), Some(y)) if !last => {
                    let (g, o) = gradient_and_objective(a, y);
                    Some((Some(g), o))
                }
                (Some(a), Some(y)) => Some((None, objective(a, y))),
                _ => None,
            };

            trace.records.push(self.record(
                t,
                &state,
                msp.as_ref(),
                msp_step.as_ref().map(|s| s.1),
                &consensus_iterate,
                local_obj,
                self.timing.then(|| start.elapsed().as_secs_f64() * 1e3),
            ));
            if last {
                break;
            }

            let exact_sum = grads.iter().skip(1).fold(grads[0].clone(), |acc, g| acc + g);
            consensus_iterate = project(&exact_sum, t + 1, None, &mut Vec::new());

            let outcome = consensus_average_tracked(&grads, self.net, t, self.rounds)?;
            if outcome.window_connected == Some(false) {
                trace.warnings.push(Warning::DisconnectedWindow { t });
            }
            for (i, mixed) in outcome.values.iter().enumerate() {
                state.dictionaries[i] = project(mixed, t + 1, Some(i), &mut trace.warnings);
            }
            state.t = t + 1;

            if let (Some(a), Some((Some(g), _))) = (msp.as_mut(), msp_step) {
                *a = project(&g, t + 1, None, &mut trace.warnings);
            }
        }
        log_warnings(&trace.warnings);
        Ok((state, trace))
    }

    #[allow(clippy::too_many_arguments)]
    fn record(
        &self,
        t: usize,
        state: &DmspState,
        msp: Option<&Matrix>,
        msp_objective: Option<f64>,
        consensus_iterate: &Matrix,
        local_obj: Vec<f64>,
        wall_ms: Option<f64>,
    ) -> IterationRecord {
        let mut rec = IterationRecord::empty(t);
        rec.nodes = state
            .dictionaries
            .iter()
            .zip(local_obj)
            .map(|(a_i, objective)| NodeRecord {
                recovery_error: self.truth.map(|d| recovery_error(a_i, d)),
                delta: msp.map(|a| frobenius_distance(a, a_i)),
                delta_c: Some(frobenius_distance(a_i, consensus_iterate)),
                objective,
            })
            .collect();
        rec.max_recovery_error = self.truth.map(|_| {
            rec.nodes
                .iter()
                .filter_map(|r| r.recovery_error)
                .fold(0.0, f64::max)
        });
        rec.delta = msp.map(|a| deviation_delta(a, state));
        rec.delta_c = Some(consensus_deviation(&state.dictionaries, consensus_iterate));
        rec.delta_a = msp.map(|a| frobenius_distance(consensus_iterate, a));
        if let (Some(a), Some(objective)) = (msp, msp_objective) {
            rec.msp = Some(MspRecord {
                recovery_error: self.truth.map(|d| recovery_error(a, d)),
                objective,
            });
        }
        rec.wall_ms = wall_ms;
        rec
    }
}

/// DMSP on a synthetic instance, coupled with MSP on the full data and
/// tracking recovery errors against the instance's dictionary.
pub fn dmsp_run(
    inst: &ProblemInstance,
    net: &TimeVaryingNetwork,
    iters: usize,
    rounds: usize,
    a0: &Matrix,
) -> Result<(DmspState, MetricsTrace)> {
    let blocks = inst.local_blocks();
    Dmsp::new(&blocks, net, iters, rounds)
        .truth(&inst.dictionary)
        .coupled(&inst.observations)
        .run(a0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::make_instance;
    use crate::matrix::{orthogonality_error, random_orthogonal, SignedPermutation};
    use crate::rng::seeded;
    use rand_distr::{Distribution, StandardNormal};

    fn gaussian(rows: usize, cols: usize, seed: u64) -> Matrix {
        let mut rng = seeded(seed);
        Matrix::from_fn(rows, cols, |_, _| StandardNormal.sample(&mut rng))
    }

    #[test]
    fn zero_data_gives_zero_gradient() {
        let g = local_gradient(&Matrix::identity(3, 3), &Matrix::zeros(3, 5));
        assert_eq!(g, Matrix::zeros(3, 3));
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let a = random_orthogonal(4, &mut seeded(1));
        let y = gaussian(4, 30, 2);
        let g = local_gradient(&a, &y);
        let h = 1e-5;
        for (i, j) in [(0, 0), (1, 3), (3, 2), (2, 1)] {
            let mut plus = a.clone();
            plus[(i, j)] += h;
            let mut minus = a.clone();
            minus[(i, j)] -= h;
            let fd = (objective(&plus, &y) - objective(&minus, &y)) / (2.0 * h);
            let rel = (fd - g[(i, j)]).abs() / g[(i, j)].abs().max(1e-8);
            assert!(rel < 1e-4, "({i},{j}): fd {fd} vs {}", g[(i, j)]);
        }
    }

    #[test]
    fn recovery_error_vanishes_at_signed_permutations() {
        let d = random_orthogonal(6, &mut seeded(3));
        assert!(recovery_error(&d.transpose(), &d) < 1e-12);
        let p = SignedPermutation::random(6, &mut seeded(4)).to_matrix();
        assert!(recovery_error(&(p * d.transpose()), &d) < 1e-12);
    }

    #[test]
    fn recovery_error_of_unrelated_dictionary_is_large() {
        let mut rng = seeded(5);
        let d = random_orthogonal(25, &mut rng);
        let mut total = 0.0;
        for _ in 0..20 {
            let a = random_orthogonal(25, &mut rng);
            let e = recovery_error(&a, &d);
            assert!(e > 0.0);
            total += e;
        }
        assert!(total / 20.0 > 0.5);
    }

    #[test]
    fn consensus_deviation_of_agreeing_values_is_zero() {
        let v = gaussian(3, 3, 6);
        assert_eq!(consensus_deviation(&[v.clone(), v.clone()], &v), 0.0);
    }

    #[test]
    fn msp_fixed_point_at_ground_truth() {
        // Y = D_o X with X a scaled signed permutation: A = D_oᵀ is optimal.
        let d = random_orthogonal(5, &mut seeded(7));
        let x = SignedPermutation::random(5, &mut seeded(8)).to_matrix() * 2.0;
        let y = &d * x;
        let (a, _) = msp_run(&y, 3, &d.transpose());
        assert!(frobenius_distance(&a, &d.transpose()) < 1e-10);
    }

    #[test]
    fn msp_objective_is_monotone_and_iterates_orthogonal() {
        let inst = make_instance(10, 2000, 0.2, 1, &mut seeded(9)).unwrap();
        let (a, trace) = msp_run(&inst.observations, 10, &Matrix::identity(10, 10));
        assert_eq!(trace.records.len(), 11);
        assert!(orthogonality_error(&a) < 1e-8);
        let obj = trace.msp_objectives();
        for w in obj.windows(2) {
            assert!(w[1] >= w[0] * (1.0 - 1e-9));
        }
    }

    #[test]
    fn dmsp_rejects_mismatched_blocks() {
        let net = TimeVaryingNetwork::new(3, 0.5, false, 1).unwrap();
        let blocks = vec![Matrix::zeros(4, 5); 2];
        let res = Dmsp::new(&blocks, &net, 2, 1).run(&Matrix::identity(4, 4));
        assert!(matches!(res, Err(Error::ShapeMismatch(_))));
    }

    #[test]
    fn zero_rounds_leave_nodes_independent() {
        let inst = make_instance(6, 600, 0.3, 3, &mut seeded(10)).unwrap();
        let net = TimeVaryingNetwork::new(3, 1.0, false, 2).unwrap();
        let a0 = Matrix::identity(6, 6);
        let (state, trace) = dmsp_run(&inst, &net, 5, 0, &a0).unwrap();
        for (a_i, y_i) in state.dictionaries.iter().zip(inst.local_blocks()) {
            let (solo, _) = msp_run(&y_i, 5, &a0);
            assert!(frobenius_distance(a_i, &solo) < 1e-12);
        }
        assert!(trace.warnings.is_empty());
        assert_eq!(trace.records[0].delta, Some(0.0));
    }

    #[test]
    fn csv_layout() {
        let inst = make_instance(4, 80, 0.3, 2, &mut seeded(11)).unwrap();
        let net = TimeVaryingNetwork::new(2, 1.0, false, 3).unwrap();
        let (_, trace) = dmsp_run(&inst, &net, 2, 1, &Matrix::identity(4, 4)).unwrap();
        let mut buf = Vec::new();
        trace.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], TRACE_CSV_HEADER);
        // 3 records × (1 msp row + 2 node rows)
        assert_eq!(lines.len(), 1 + 3 * 3);
        assert!(lines[1].starts_with("0,msp,"));
        assert!(lines[2].starts_with("0,0,"));
        assert!(lines.iter().all(|l| l.split(',').count() == 7));
    }
}
