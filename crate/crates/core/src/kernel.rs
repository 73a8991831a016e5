//! Lane-blocked integer matrix multiplication used by the benchmark artifact.
//!
//! Columns are processed in blocks of `lanes` accumulators, the way a SIMD
//! kernel keeps one vector register per block. Arithmetic is on `i64` with
//! overflow checks, so every lane width yields exactly the same product.

use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

pub const MAX_LANES: usize = 8;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum KernelError {
    #[error("lane width must be between 1 and {MAX_LANES}, got {0}")]
    BadLanes(usize),
    #[error("cannot multiply {0}x{1} by {2}x{3}")]
    Shape(usize, usize, usize, usize),
    #[error("integer overflow at element ({0}, {1})")]
    Overflow(usize, usize),
}

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<i64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<i64>) -> Self {
        assert_eq!(data.len(), rows * cols, "data length must be rows * cols");
        Matrix { rows, cols, data }
    }

    /// Entries drawn uniformly from `-1000..=1000`.
    pub fn random(rows: usize, cols: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..rows * cols)
            .map(|_| rng.random_range(-1000..=1000))
            .collect();
        Matrix { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, r: usize, c: usize) -> i64 {
        self.data[r * self.cols + c]
    }

    pub fn as_slice(&self) -> &[i64] {
        &self.data
    }

    /// Order-sensitive digest of the entries, for compact printing.
    pub fn checksum(&self) -> i64 {
        self.data.iter().enumerate().fold(0i64, |acc, (i, v)| {
            acc.wrapping_mul(31).wrapping_add(v ^ i as i64)
        })
    }
}

pub fn matmul(a: &Matrix, b: &Matrix, lanes: usize) -> Result<Matrix, KernelError> {
    if lanes == 0 || lanes > MAX_LANES {
        return Err(KernelError::BadLanes(lanes));
    }
    if a.cols != b.rows {
        return Err(KernelError::Shape(a.rows, a.cols, b.rows, b.cols));
    }
    let (m, k, n) = (a.rows, a.cols, b.cols);
    let mut c = Matrix::zeros(m, n);
    for i in 0..m {
        let a_row = &a.data[i * k..(i + 1) * k];
        for j0 in (0..n).step_by(lanes) {
            let width = lanes.min(n - j0);
            let mut acc = [0i64; MAX_LANES];
            for (p, &aip) in a_row.iter().enumerate() {
                let b_row = &b.data[p * n + j0..p * n + j0 + width];
                for (l, &bpj) in b_row.iter().enumerate() {
                    acc[l] = aip
                        .checked_mul(bpj)
                        .and_then(|x| acc[l].checked_add(x))
                        .ok_or(KernelError::Overflow(i, j0 + l))?;
                }
            }
            c.data[i * n + j0..i * n + j0 + width].copy_from_slice(&acc[..width]);
        }
    }
    Ok(c)
}

#[derive(Debug, Clone)]
pub struct BenchReport {
    pub m: usize,
    pub n: usize,
    pub k: usize,
    pub lanes: usize,
    pub elapsed: Duration,
    pub checksum: i64,
}

impl BenchReport {
    /// Multiply-add pairs per second, in billions (hardware dependent).
    pub fn gops(&self) -> f64 {
        let ops = 2.0 * (self.m * self.n * self.k) as f64;
        ops / self.elapsed.as_secs_f64().max(1e-9) / 1e9
    }
}

/// Multiplies seeded `m×k` and `k×n` matrices at the given lane width.
pub fn run_benchmark(
    m: usize,
    n: usize,
    k: usize,
    lanes: usize,
    seed: u64,
) -> Result<BenchReport, KernelError> {
    let a = Matrix::random(m, k, seed);
    let b = Matrix::random(k, n, seed.wrapping_add(1));
    let start = Instant::now();
    let c = matmul(&a, &b, lanes)?;
    let elapsed = start.elapsed();
    Ok(BenchReport {
        m,
        n,
        k,
        lanes,
        elapsed,
        checksum: c.checksum(),
    })
}
