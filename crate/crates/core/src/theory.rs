//! Numerical checks of the inequalities behind the DMSP convergence argument.
//!
//! Every check draws orthogonal matrices at a prescribed Frobenius distance
//! from a random signed permutation P and tests one inequality on them. A
//! check records a violation only when the inequality fails by more than
//! [`TOLERANCE`]; margins are reported with "positive = satisfied".

use std::io::Write;

use nalgebra::SymmetricEigen;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::data::{even_partition, expected_gradient, sample_bg};
use crate::error::Result;
use crate::matrix::{
    frobenius_distance, hadamard_pow3, mul_transpose, orthogonality_error, polar_project, sigma_min,
    Matrix, SignedPermutation,
};
use crate::rng::{derive_seed, seeded};

pub const TOLERANCE: f64 = 1e-9;

/// Relative Frobenius error allowed between a Monte-Carlo gradient average
/// and its closed-form expectation.
pub const MONTE_CARLO_TOLERANCE: f64 = 0.02;

/// Accuracy required of the ε-sphere construction.
pub const CONSTRUCTION_TOLERANCE: f64 = 1e-10;

/// Outcome of one check at one parameter point.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckReport {
    pub name: &'static str,
    pub n: usize,
    pub theta: Option<f64>,
    pub alpha: Option<f64>,
    pub epsilon: f64,
    pub p: Option<f64>,
    pub trials: usize,
    /// Trials on which the inequality was actually evaluated.
    pub evaluated: usize,
    pub violations: usize,
    /// Smallest margin seen; negative values beyond the tolerance are
    /// violations.
    pub worst_margin: f64,
    /// Admissible ε limit used for the parameter point, when one applies.
    pub epsilon_limit: Option<f64>,
    /// The alternative ε limit form, recorded for comparison.
    pub epsilon_limit_alt: Option<f64>,
}

impl CheckReport {
    fn new(name: &'static str, n: usize, epsilon: f64, trials: usize) -> Self {
        Self {
            name,
            n,
            theta: None,
            alpha: None,
            epsilon,
            p: None,
            trials,
            evaluated: 0,
            violations: 0,
            worst_margin: f64::INFINITY,
            epsilon_limit: None,
            epsilon_limit_alt: None,
        }
    }

    fn observe(&mut self, margin: f64) {
        self.evaluated += 1;
        self.worst_margin = self.worst_margin.min(margin);
        if margin.is_nan() || margin < -TOLERANCE {
            self.violations += 1;
        }
    }

    pub fn passed(&self) -> bool {
        self.violations == 0
    }
}

pub const REPORT_CSV_HEADER: &str =
    "check,n,theta,alpha,epsilon,p,trials,evaluated,violations,worst_margin,epsilon_limit,epsilon_limit_alt";

pub fn write_reports_csv<W: Write>(reports: &[CheckReport], mut out: W) -> Result<()> {
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    writeln!(out, "{REPORT_CSV_HEADER}")?;
    for r in reports {
        let worst = if r.evaluated == 0 {
            String::new()
        } else {
            r.worst_margin.to_string()
        };
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            r.name,
            r.n,
            opt(r.theta),
            opt(r.alpha),
            r.epsilon,
            opt(r.p),
            r.trials,
            r.evaluated,
            r.violations,
            worst,
            opt(r.epsilon_limit),
            opt(r.epsilon_limit_alt),
        )?;
    }
    Ok(())
}

/// Random skew-symmetric matrix with unit Frobenius norm.
fn unit_skew<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Matrix {
    let g = Matrix::from_fn(n, n, |_, _| rng.sample::<f64, _>(StandardNormal));
    let s = &g - g.transpose();
    let norm = s.norm();
    s / norm
}

/// exp(τS) for a unit skew S, with τ chosen so that ‖exp(τS) − I‖_F = radius.
///
/// With ±iω_k the eigenvalues of S, ‖exp(τS) − I‖² = Σ 4 sin²(τω/2) summed
/// over the eigenvalues ω² of SᵀS, which increases on [0, π/ω_max]; τ is
/// found by bisection on that scalar function.
fn geodesic_step(s: &Matrix, radius: f64) -> Matrix {
    let n = s.nrows();
    if radius == 0.0 || n < 2 {
        return Matrix::identity(n, n);
    }
    let freqs: Vec<f64> = SymmetricEigen::new(s.transpose() * s)
        .eigenvalues
        .iter()
        .map(|&l| l.max(0.0).sqrt())
        .collect();
    let w_max = freqs.iter().copied().fold(0.0, f64::max);
    let dist2 = |tau: f64| -> f64 { freqs.iter().map(|w| 4.0 * (0.5 * tau * w).sin().powi(2)).sum() };
    let target = radius * radius;
    let (mut lo, mut hi) = (0.0, std::f64::consts::PI / w_max);
    assert!(dist2(hi) >= target, "radius {radius} unreachable along this geodesic");
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if dist2(mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-16 * hi {
            break;
        }
    }
    let step = (s * (0.5 * (lo + hi))).exp();
    // exp of a skew matrix is orthogonal up to rounding; snap it back.
    polar_project(&step).q
}

/// U = P exp(τS) with ‖U − P‖_F = radius (radius ≤ 1 in all checks).
pub fn sample_on_sphere<R: Rng + ?Sized>(p: &Matrix, radius: f64, rng: &mut R) -> Matrix {
    let s = unit_skew(p.nrows(), rng);
    let u = p * geodesic_step(&s, radius);
    validate_construction(&u, p, radius);
    u
}

/// U = P exp(τS) with ‖U − P‖_F drawn uniformly in [0, radius].
pub fn sample_in_ball<R: Rng + ?Sized>(p: &Matrix, radius: f64, rng: &mut R) -> Matrix {
    let r = radius * rng.random::<f64>();
    sample_on_sphere(p, r, rng)
}

fn validate_construction(u: &Matrix, p: &Matrix, radius: f64) {
    let d = frobenius_distance(u, p);
    assert!(
        (d - radius).abs() <= CONSTRUCTION_TOLERANCE,
        "sphere construction missed: ‖U − P‖ = {d}, wanted {radius}"
    );
    assert!(
        orthogonality_error(u) <= CONSTRUCTION_TOLERANCE,
        "sphere construction left O(n)"
    );
}

/// On ‖U − P‖_F = ε: |u_ij| ≥ 1 − ε²/2 wherever p_ij ≠ 0.
pub fn check_lemma4<R: Rng + ?Sized>(n: usize, epsilon: f64, trials: usize, rng: &mut R) -> CheckReport {
    let mut report = CheckReport::new("lemma4", n, epsilon, trials);
    let bound = 1.0 - 0.5 * epsilon * epsilon;
    for _ in 0..trials {
        let sp = SignedPermutation::random(n, rng);
        let u = sample_on_sphere(&sp.to_matrix(), epsilon, rng);
        let margin = sp
            .perm()
            .iter()
            .enumerate()
            .map(|(i, &j)| u[(i, j)].abs() - bound)
            .fold(f64::INFINITY, f64::min);
        report.observe(margin);
    }
    report
}

/// On ‖U − P‖_F = ε ≤ 1: |⟨u_i^∘3, u_j⟩| ≤ 2ε for every pair of rows i ≠ j.
pub fn check_lemma5<R: Rng + ?Sized>(n: usize, epsilon: f64, trials: usize, rng: &mut R) -> CheckReport {
    let mut report = CheckReport::new("lemma5", n, epsilon, trials);
    for _ in 0..trials {
        let p = SignedPermutation::random(n, rng).to_matrix();
        let u = sample_on_sphere(&p, epsilon, rng);
        let cubed = hadamard_pow3(&u);
        let cross = mul_transpose(&cubed, &u);
        let mut margin = f64::INFINITY;
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    margin = margin.min(2.0 * epsilon - cross[(i, j)].abs());
                }
            }
        }
        report.observe(margin);
    }
    report
}

/// For U, V within ε ≤ 1 of the same P: ‖U^∘3 − V^∘3‖_F ≤ 3√2 ε ‖U − V‖_F.
pub fn check_lemma7<R: Rng + ?Sized>(n: usize, epsilon: f64, trials: usize, rng: &mut R) -> CheckReport {
    let mut report = CheckReport::new("lemma7", n, epsilon, trials);
    let c = 3.0 * 2f64.sqrt() * epsilon;
    for _ in 0..trials {
        let p = SignedPermutation::random(n, rng).to_matrix();
        let u = sample_on_sphere(&p, epsilon, rng);
        let v = sample_in_ball(&p, epsilon, rng);
        let lhs = frobenius_distance(&hadamard_pow3(&u), &hadamard_pow3(&v));
        report.observe(c * frobenius_distance(&u, &v) - lhs);
    }
    report
}

/// Relative Frobenius error of a Monte-Carlo draw of (UX)^∘3 Xᵀ with `p`
/// BG(θ) columns against 3pθ(1−θ)U^∘3 + 3pθ²U.
pub fn monte_carlo_gradient_error<R: Rng + ?Sized>(u: &Matrix, p: usize, theta: f64, rng: &mut R) -> Result<f64> {
    let x = sample_bg(u.nrows(), p, theta, rng)?;
    let ux = hadamard_pow3(&(u * &x));
    let empirical = mul_transpose(&ux, &x);
    let expected = expected_gradient(u, p as f64, theta);
    Ok(frobenius_distance(&empirical, &expected) / expected.norm())
}

/// Two-part check on U within ε of P:
/// (a) a Monte-Carlo draw of (UX)^∘3 Xᵀ with p columns lies within 2% of the
///     closed form (first trial only);
/// (b) σ_n of the closed form is at least 3pθ(1−θ)(1−2nε) + 3pθ², checked
///     whenever 1 − 2nε > 0.
///
/// Margins for (b) are divided by 3pθ; the Monte-Carlo part contributes
/// 2% − error.
pub fn check_lemma2_and_6<R: Rng + ?Sized>(
    n: usize,
    theta: f64,
    epsilon: f64,
    p: usize,
    trials: usize,
    rng: &mut R,
) -> Result<CheckReport> {
    let mut report = CheckReport::new("lemma2_and_6", n, epsilon, trials);
    report.theta = Some(theta);
    report.p = Some(p as f64);
    let pf = p as f64;
    let bound = 3.0 * pf * theta * (1.0 - theta) * (1.0 - 2.0 * n as f64 * epsilon) + 3.0 * pf * theta * theta;
    let scale = 3.0 * pf * theta;
    for trial in 0..trials {
        let pm = SignedPermutation::random(n, rng).to_matrix();
        let u = sample_on_sphere(&pm, epsilon, rng);
        if trial == 0 {
            let err = monte_carlo_gradient_error(&u, p, theta, rng)?;
            report.observe(MONTE_CARLO_TOLERANCE - err);
        }
        if 1.0 - 2.0 * n as f64 * epsilon > 0.0 {
            let s = sigma_min(&expected_gradient(&u, pf, theta));
            report.observe((s - bound) / scale);
        }
    }
    Ok(report)
}

/// Admissible ε for the one-step contraction with the (1−α)(1+θ) term.
pub fn contraction_eps_limit(n: usize, theta: f64, alpha: f64) -> f64 {
    let n = n as f64;
    (alpha - theta)
        / (2.0 * alpha * n * (1.0 - theta) + 3.0 * 2f64.sqrt() * (1.0 - alpha) * (1.0 + theta) + alpha * theta)
}

/// The same limit with the (1+α)(1−θ) term, as stated for the multi-step
/// result. It is the smaller of the two for α > θ.
pub fn contraction_eps_limit_alt(n: usize, theta: f64, alpha: f64) -> f64 {
    let n = n as f64;
    (alpha - theta)
        / (2.0 * alpha * n * (1.0 - theta) + 3.0 * 2f64.sqrt() * (1.0 + alpha) * (1.0 - theta) + alpha * theta)
}

/// The deterministic contraction ratio
/// 2‖E[B] − Σ E[B_i]‖_F / (σ_n(E[B]) + σ_n(Σ E[B_i])), where B uses U on all
/// p columns and B_i uses U_i on node i's share of them.
pub fn expected_contraction_ratio(u: &Matrix, locals: &[Matrix], p: usize, theta: f64) -> Result<f64> {
    let shares = even_partition(p, locals.len())?;
    let global = expected_gradient(u, p as f64, theta);
    let n = u.nrows();
    let summed = locals
        .iter()
        .zip(&shares)
        .fold(Matrix::zeros(n, n), |acc, (ui, r)| acc + expected_gradient(ui, r.len() as f64, theta));
    let num = 2.0 * frobenius_distance(&global, &summed);
    Ok(num / (sigma_min(&global) + sigma_min(&summed)))
}

/// With U and all U_i within ε of a common P and ε below the admissible
/// limit, the contraction ratio is below α δ, δ = max_i ‖U − U_i‖_F.
///
/// Half of the trials draw U and the U_i independently in the ε-ball; the
/// other half put U at radius ε/2 and the U_i within a log-uniform distance
/// in [1e−6, ε/2] of U, probing the near-consensus regime. Margins are
/// α − ratio/δ.
#[allow(clippy::too_many_arguments)]
pub fn check_theorem2<R: Rng + ?Sized>(
    n: usize,
    theta: f64,
    alpha: f64,
    epsilon: f64,
    nodes: usize,
    trials: usize,
    rng: &mut R,
) -> Result<CheckReport> {
    let mut report = CheckReport::new("theorem2", n, epsilon, trials);
    let p = 1000 * nodes;
    report.theta = Some(theta);
    report.alpha = Some(alpha);
    report.p = Some(p as f64);
    report.epsilon_limit = Some(contraction_eps_limit(n, theta, alpha));
    report.epsilon_limit_alt = Some(contraction_eps_limit_alt(n, theta, alpha));
    for trial in 0..trials {
        let pm = SignedPermutation::random(n, rng).to_matrix();
        let (u, locals) = if trial % 2 == 0 {
            let u = sample_in_ball(&pm, epsilon, rng);
            let locals: Vec<Matrix> = (0..nodes).map(|_| sample_in_ball(&pm, epsilon, rng)).collect();
            (u, locals)
        } else {
            let u = sample_on_sphere(&pm, 0.5 * epsilon, rng);
            let hi = (0.5 * epsilon).max(1e-6);
            let locals = (0..nodes)
                .map(|_| {
                    let r = (1e-6f64.ln() + rng.random::<f64>() * (hi.ln() - 1e-6f64.ln())).exp();
                    sample_on_sphere(&u, r.min(hi), rng)
                })
                .collect();
            (u, locals)
        };
        let delta = locals.iter().map(|ui| frobenius_distance(&u, ui)).fold(0.0, f64::max);
        if delta == 0.0 {
            continue;
        }
        let ratio = expected_contraction_ratio(&u, &locals, p, theta)?;
        report.observe(alpha - ratio / delta);
    }
    Ok(report)
}

/// One entry of a check grid.
#[derive(Debug, Clone, PartialEq)]
pub enum CheckSpec {
    Lemma4 { n: usize, epsilon: f64 },
    Lemma5 { n: usize, epsilon: f64 },
    Lemma7 { n: usize, epsilon: f64 },
    Lemma2And6 { n: usize, theta: f64, epsilon: f64, p: usize },
    Theorem2 { n: usize, theta: f64, alpha: f64, epsilon: f64, nodes: usize },
}

/// Dimensions 3..=6, θ ∈ {0.1, 0.3}, admissible ε for each inequality.
pub fn default_grid() -> Vec<CheckSpec> {
    let dims = [3usize, 4, 5, 6];
    let thetas = [0.1, 0.3];
    let mut grid = Vec::new();
    for &n in &dims {
        for &epsilon in &[0.1, 0.5, 1.0] {
            grid.push(CheckSpec::Lemma4 { n, epsilon });
            grid.push(CheckSpec::Lemma5 { n, epsilon });
            grid.push(CheckSpec::Lemma7 { n, epsilon });
        }
    }
    for &n in &dims {
        for &theta in &thetas {
            for &epsilon in &[0.0, 0.4 / (2.0 * n as f64)] {
                grid.push(CheckSpec::Lemma2And6 {
                    n,
                    theta,
                    epsilon,
                    p: 2_000_000,
                });
            }
            let alpha = 0.5;
            let limit = contraction_eps_limit(n, theta, alpha);
            for &frac in &[0.5, 0.99] {
                grid.push(CheckSpec::Theorem2 {
                    n,
                    theta,
                    alpha,
                    epsilon: frac * limit,
                    nodes: 4,
                });
            }
        }
    }
    grid
}

/// Small grid for smoke runs.
pub fn quick_grid() -> Vec<CheckSpec> {
    vec![
        CheckSpec::Lemma4 { n: 4, epsilon: 0.5 },
        CheckSpec::Lemma5 { n: 4, epsilon: 0.5 },
        CheckSpec::Lemma7 { n: 4, epsilon: 0.5 },
        CheckSpec::Lemma2And6 {
            n: 4,
            theta: 0.2,
            epsilon: 0.05,
            p: 200_000,
        },
        CheckSpec::Theorem2 {
            n: 4,
            theta: 0.1,
            alpha: 0.5,
            epsilon: 0.5 * contraction_eps_limit(4, 0.1, 0.5),
            nodes: 4,
        },
    ]
}

/// Runs every grid entry with `trials` trials; entry k uses a generator
/// derived from (seed, k).
pub fn run_grid(grid: &[CheckSpec], trials: usize, seed: u64) -> Result<Vec<CheckReport>> {
    grid.iter()
        .enumerate()
        .map(|(k, spec)| {
            let mut rng = seeded(derive_seed(seed, k as u64));
            Ok(match *spec {
                CheckSpec::Lemma4 { n, epsilon } => check_lemma4(n, epsilon, trials, &mut rng),
                CheckSpec::Lemma5 { n, epsilon } => check_lemma5(n, epsilon, trials, &mut rng),
                CheckSpec::Lemma7 { n, epsilon } => check_lemma7(n, epsilon, trials, &mut rng),
                CheckSpec::Lemma2And6 { n, theta, epsilon, p } => {
                    check_lemma2_and_6(n, theta, epsilon, p, trials, &mut rng)?
                }
                CheckSpec::Theorem2 {
                    n,
                    theta,
                    alpha,
                    epsilon,
                    nodes,
                } => check_theorem2(n, theta, alpha, epsilon, nodes, trials, &mut rng)?,
            })
        })
        .collect()
}
