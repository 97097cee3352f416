//! Synthetic problem instances under the Bernoulli-Gaussian model.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::ops::Range;
use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::matrix::{hadamard_pow3, random_orthogonal, Matrix};

/// Draws an `n × p` matrix with i.i.d. BG(θ) entries: a Bernoulli(θ) mask
/// times a standard Gaussian.
pub fn sample_bg<R: Rng + ?Sized>(n: usize, p: usize, theta: f64, rng: &mut R) -> Result<Matrix> {
    check_theta(theta)?;
    Ok(Matrix::from_fn(n, p, |_, _| {
        if rng.random::<f64>() < theta {
            rng.sample(StandardNormal)
        } else {
            0.0
        }
    }))
}

fn check_theta(theta: f64) -> Result<()> {
    if theta > 0.0 && theta < 1.0 {
        Ok(())
    } else {
        Err(Error::invalid("theta", format!("{theta} is outside (0, 1)")))
    }
}

/// Contiguous column slices of `0..p`, sizes differing by at most one; the
/// `p mod parts` leftover columns go to the lowest-indexed slices.
pub fn even_partition(p: usize, parts: usize) -> Result<Vec<Range<usize>>> {
    if parts == 0 {
        return Err(Error::invalid("nodes", "must be positive"));
    }
    if parts > p {
        return Err(Error::invalid("nodes", format!("{parts} nodes exceed {p} samples")));
    }
    let base = p / parts;
    let extra = p % parts;
    let mut start = 0;
    Ok((0..parts)
        .map(|i| {
            let len = base + usize::from(i < extra);
            let r = start..start + len;
            start += len;
            r
        })
        .collect())
}

/// Ground truth, codes, observations and their split across nodes.
#[derive(Debug, Clone)]
pub struct ProblemInstance {
    pub n: usize,
    pub p: usize,
    pub theta: f64,
    /// Orthogonal ground-truth dictionary D_o.
    pub dictionary: Matrix,
    /// Sparse codes X.
    pub codes: Matrix,
    /// Observations Y = D_o X.
    pub observations: Matrix,
    pub partition: Vec<Range<usize>>,
}

impl ProblemInstance {
    pub fn nodes(&self) -> usize {
        self.partition.len()
    }

    /// Local observation blocks Y_i, one per node.
    pub fn local_blocks(&self) -> Vec<Matrix> {
        self.partition
            .iter()
            .map(|r| self.observations.columns(r.start, r.len()).clone_owned())
            .collect()
    }
}

/// Samples D_o (Haar), X ~ BG(θ) and Y = D_o X, split evenly over `nodes`.
pub fn make_instance<R: Rng + ?Sized>(
    n: usize,
    p: usize,
    theta: f64,
    nodes: usize,
    rng: &mut R,
) -> Result<ProblemInstance> {
    if n == 0 {
        return Err(Error::invalid("n", "must be positive"));
    }
    check_theta(theta)?;
    let partition = even_partition(p, nodes)?;
    let dictionary = random_orthogonal(n, rng);
    let codes = sample_bg(n, p, theta, rng)?;
    let observations = &dictionary * &codes;
    Ok(ProblemInstance {
        n,
        p,
        theta,
        dictionary,
        codes,
        observations,
        partition,
    })
}

/// E[(UX)^∘3 Xᵀ] = 3pθ(1−θ) U^∘3 + 3pθ² U for X with p i.i.d. BG(θ) columns.
pub fn expected_gradient(u: &Matrix, p: f64, theta: f64) -> Matrix {
    let cubic = 3.0 * p * theta * (1.0 - theta);
    let linear = 3.0 * p * theta * theta;
    hadamard_pow3(u) * cubic + u * linear
}

/// Writes `rows,cols` on the first line, then one CSV line per row.
pub fn write_matrix_csv(m: &Matrix, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "{},{}", m.nrows(), m.ncols())?;
    for i in 0..m.nrows() {
        let line: Vec<String> = m.row(i).iter().map(|v| format!("{v:e}")).collect();
        writeln!(w, "{}", line.join(","))?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_matrix_csv(path: &Path) -> Result<Matrix> {
    let reader = BufReader::new(File::open(path)?);
    let mut lines = reader.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::MatrixDump("empty file".into()))??;
    let (rows, cols) = parse_shape(&header)?;
    let mut values = Vec::with_capacity(rows * cols);
    for line in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        for tok in line.split(',') {
            let v: f64 = tok
                .trim()
                .parse()
                .map_err(|_| Error::MatrixDump(format!("bad value `{tok}`")))?;
            values.push(v);
        }
    }
    if values.len() != rows * cols {
        return Err(Error::MatrixDump(format!(
            "expected {} values, found {}",
            rows * cols,
            values.len()
        )));
    }
    Ok(Matrix::from_row_slice(rows, cols, &values))
}

fn parse_shape(header: &str) -> Result<(usize, usize)> {
    let mut it = header.split(',').map(|s| s.trim().parse::<usize>());
    match (it.next(), it.next(), it.next()) {
        (Some(Ok(r)), Some(Ok(c)), None) => Ok((r, c)),
        _ => Err(Error::MatrixDump(format!("bad header `{header}`"))),
    }
}

/// Little-endian binary dump: u64 rows, u64 cols, then row-major f64 values.
pub fn write_matrix_bin(m: &Matrix, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(&(m.nrows() as u64).to_le_bytes())?;
    w.write_all(&(m.ncols() as u64).to_le_bytes())?;
    for i in 0..m.nrows() {
        for v in m.row(i).iter() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_matrix_bin(path: &Path) -> Result<Matrix> {
    let mut bytes = Vec::new();
    File::open(path)?.read_to_end(&mut bytes)?;
    if bytes.len() < 16 {
        return Err(Error::MatrixDump("truncated header".into()));
    }
    let word = |k: usize| u64::from_le_bytes(bytes[8 * k..8 * k + 8].try_into().unwrap());
    let (rows, cols) = (word(0) as usize, word(1) as usize);
    let expected = rows
        .checked_mul(cols)
        .and_then(|c| c.checked_mul(8))
        .ok_or_else(|| Error::MatrixDump("shape overflow".into()))?;
    if bytes.len() - 16 != expected {
        return Err(Error::MatrixDump(format!(
            "expected {expected} payload bytes, found {}",
            bytes.len() - 16
        )));
    }
    let values: Vec<f64> = bytes[16..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok(Matrix::from_row_slice(rows, cols, &values))
}
