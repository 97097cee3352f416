//! Dense matrix primitives used by the learners and the theory checks.
//!
//! All functions are pure; random sampling takes its generator explicitly.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;

/// Dense real matrix (column-major storage).
pub type Matrix = DMatrix<f64>;

/// Ratio σ_min/σ_max below which the polar factor is not unique.
pub const DEGENERATE_RATIO: f64 = 1e-12;

/// Fourth power of the element-wise ℓ⁴ norm, Σ m_ij⁴.
pub fn l4_norm4(m: &Matrix) -> f64 {
    m.iter().map(|&v| (v * v) * (v * v)).sum()
}

/// Entry-wise cube.
pub fn hadamard_pow3(m: &Matrix) -> Matrix {
    m.map(|v| v * v * v)
}

pub fn frobenius_distance(a: &Matrix, b: &Matrix) -> f64 {
    assert_eq!(a.shape(), b.shape(), "frobenius_distance: shape mismatch");
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// ‖QQᵀ − I‖_F.
pub fn orthogonality_error(q: &Matrix) -> f64 {
    let n = q.nrows();
    let gram = q * q.transpose();
    frobenius_distance(&gram, &Matrix::identity(n, n))
}

pub fn is_finite(m: &Matrix) -> bool {
    m.iter().all(|v| v.is_finite())
}

/// Singular values in descending order.
pub fn singular_values(a: &Matrix) -> Vec<f64> {
    let mut s: Vec<f64> = a.clone().svd(false, false).singular_values.iter().copied().collect();
    s.sort_by(|x, y| y.total_cmp(x));
    s
}

/// Smallest singular value of a square matrix.
pub fn sigma_min(a: &Matrix) -> f64 {
    singular_values(a).last().copied().unwrap_or(0.0)
}

/// `a · bᵀ` without materializing the transpose.
pub fn mul_transpose(a: &Matrix, b: &Matrix) -> Matrix {
    assert_eq!(a.ncols(), b.ncols(), "mul_transpose: inner dimension mismatch");
    let (m, k, n) = (a.nrows(), a.ncols(), b.nrows());
    let mut out = Matrix::zeros(m, n);
    if m == 0 || n == 0 || k == 0 {
        return out;
    }
    // Column-major: element (i, j) of a lives at i + j * m. bᵀ(p, j) = b(j, p).
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            1,
            m as isize,
            b.as_ptr(),
            n as isize,
            1,
            0.0,
            out.as_mut_ptr(),
            1,
            m as isize,
        );
    }
    out
}

/// Result of projecting a square matrix onto the orthogonal group.
#[derive(Debug, Clone)]
pub struct PolarFactor {
    /// The orthogonal factor UVᵀ.
    pub q: Matrix,
    /// σ_min/σ_max of the projected matrix (0 for the zero matrix).
    pub condition_ratio: f64,
}

impl PolarFactor {
    /// True when UVᵀ is not uniquely determined by the input.
    pub fn is_degenerate(&self) -> bool {
        self.condition_ratio.is_nan() || self.condition_ratio < DEGENERATE_RATIO
    }
}

/// Projection onto O(n): Q = UVᵀ from the SVD Z = UΣVᵀ.
///
/// Q maximizes ⟨Q, Z⟩ over orthogonal matrices. Only the product UVᵀ is
/// exposed, so the sign ambiguity of the individual singular vectors does not
/// matter and no sign normalization is applied. A rank-deficient input still
/// yields an orthogonal matrix; callers inspect [`PolarFactor::is_degenerate`].
///
/// Panics if `z` is not square.
pub fn polar_project(z: &Matrix) -> PolarFactor {
    assert!(z.is_square(), "polar_project: matrix must be square");
    let svd = z.clone().svd(true, true);
    let u = svd.u.expect("left singular vectors requested");
    let v_t = svd.v_t.expect("right singular vectors requested");
    let (mut lo, mut hi) = (f64::INFINITY, 0.0_f64);
    for &s in svd.singular_values.iter() {
        lo = lo.min(s);
        hi = hi.max(s);
    }
    let condition_ratio = if hi > 0.0 { lo / hi } else { 0.0 };
    PolarFactor {
        q: u * v_t,
        condition_ratio,
    }
}

/// Haar-distributed orthogonal matrix: QR of a Gaussian matrix with the
/// diagonal of R made positive.
pub fn random_orthogonal<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Matrix {
    assert!(n >= 1, "random_orthogonal: n must be positive");
    let g = Matrix::from_fn(n, n, |_, _| rng.sample::<f64, _>(StandardNormal));
    let qr = g.qr();
    let r = qr.r();
    let mut q = qr.q();
    for j in 0..n {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    q
}

/// A permutation matrix with ±1 entries. Row `i` has its nonzero in column
/// `perm[i]` with value `signs[i]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SignedPermutation {
    perm: Vec<usize>,
    signs: Vec<i8>,
}

impl SignedPermutation {
    pub fn new(perm: Vec<usize>, signs: Vec<i8>) -> Self {
        assert_eq!(perm.len(), signs.len(), "perm and signs differ in length");
        let mut seen = vec![false; perm.len()];
        for &j in &perm {
            assert!(j < perm.len() && !seen[j], "perm is not a bijection");
            seen[j] = true;
        }
        assert!(signs.iter().all(|&s| s == 1 || s == -1), "signs must be ±1");
        Self { perm, signs }
    }

    pub fn identity(n: usize) -> Self {
        Self {
            perm: (0..n).collect(),
            signs: vec![1; n],
        }
    }

    /// Uniformly random permutation and signs.
    pub fn random<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Self {
        let mut perm: Vec<usize> = (0..n).collect();
        // Fisher-Yates
        for i in (1..n).rev() {
            let j = rng.random_range(0..=i);
            perm.swap(i, j);
        }
        let signs = (0..n).map(|_| if rng.random::<bool>() { 1 } else { -1 }).collect();
        Self { perm, signs }
    }

    pub fn len(&self) -> usize {
        self.perm.len()
    }

    pub fn is_empty(&self) -> bool {
        self.perm.is_empty()
    }

    pub fn perm(&self) -> &[usize] {
        &self.perm
    }

    pub fn signs(&self) -> &[i8] {
        &self.signs
    }

    pub fn to_matrix(&self) -> Matrix {
        let n = self.perm.len();
        let mut p = Matrix::zeros(n, n);
        for (i, (&j, &s)) in self.perm.iter().zip(&self.signs).enumerate() {
            p[(i, j)] = f64::from(s);
        }
        p
    }
}

/// The signed permutation P minimizing ‖U − P‖_F.
///
/// ‖U − P‖² = ‖U‖² + n − 2 Σ_i s_i u_{i,π(i)}, so the optimum matches rows to
/// columns maximizing Σ |u_{i,π(i)}| and takes each sign from the matched
/// entry.
pub fn nearest_signed_permutation(u: &Matrix) -> SignedPermutation {
    assert!(u.is_square(), "nearest_signed_permutation: matrix must be square");
    let weights = u.map(f64::abs);
    let perm = max_weight_assignment(&weights);
    let signs = perm
        .iter()
        .enumerate()
        .map(|(i, &j)| if u[(i, j)] < 0.0 { -1 } else { 1 })
        .collect();
    SignedPermutation { perm, signs }
}

/// Hungarian method (shortest augmenting paths with potentials), O(n³).
/// Returns `assignment[row] = col` maximizing the total weight.
fn max_weight_assignment(weights: &Matrix) -> Vec<usize> {
    let n = weights.nrows();
    if n == 0 {
        return Vec::new();
    }
    let cost = |i: usize, j: usize| -weights[(i - 1, j - 1)];
    // 1-based arrays; index 0 is the virtual source column.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut row_of_col = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        row_of_col[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = row_of_col[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0usize;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = cost(i0, j) - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[row_of_col[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if row_of_col[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            row_of_col[j0] = row_of_col[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assignment = vec![0usize; n];
    for j in 1..=n {
        assignment[row_of_col[j] - 1] = j - 1;
    }
    assignment
}

/// Gersgorin-type lower bound on σ_min:
/// min_i { |a_ii| − ½(Σ_{j≠i} |a_ij| + Σ_{j≠i} |a_ji|) }. May be negative.
pub fn gersgorin_sigma_min_bound(a: &Matrix) -> f64 {
    assert!(a.is_square(), "gersgorin_sigma_min_bound: matrix must be square");
    let n = a.nrows();
    (0..n)
        .map(|i| {
            let off: f64 = (0..n)
                .filter(|&j| j != i)
                .map(|j| a[(i, j)].abs() + a[(j, i)].abs())
                .sum();
            a[(i, i)].abs() - 0.5 * off
        })
        .fold(f64::INFINITY, f64::min)
}
