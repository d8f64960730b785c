//! Dense-matrix kernels shared by both analyzers.
//!
//! Matrices are small (desk scale, `n` up to a few hundred) and stored as
//! row-major complex entries. Decompositions are delegated to `nalgebra`.

use std::fmt;

use nalgebra::{DMatrix, Schur, SVD};
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

const SVD_MAX_ITER: usize = 1_000;
const SCHUR_MAX_ITER: usize = 10_000;
const SYNTH_MAX_ATTEMPTS: usize = 16;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NumError {
    #[error("matrix dimensions must be positive, got {rows}x{cols}")]
    EmptyShape { rows: usize, cols: usize },
    #[error("entry count {len} does not match {rows}x{cols}")]
    Shape { rows: usize, cols: usize, len: usize },
    #[error("non-finite entry at ({row}, {col})")]
    NonFinite { row: usize, col: usize },
    #[error("matrix must be square, got {rows}x{cols}")]
    NotSquare { rows: usize, cols: usize },
    #[error("{op} did not converge for matrix {matrix}")]
    NonConvergence { op: &'static str, matrix: String },
    #[error("root list is empty")]
    EmptyRoots,
    #[error("block list is empty or contains a zero-size block")]
    InvalidBlocks,
    #[error("basis condition cap must exceed 1, got {0}")]
    InvalidConditionCap(f64),
    #[error("no similarity basis under condition cap {cap} after {attempts} attempts")]
    ConditionCapExceeded { cap: f64, attempts: usize },
}

/// A dense complex matrix in row-major order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    entries: Vec<Complex64>,
}

impl DenseMatrix {
    pub fn new(rows: usize, cols: usize, entries: Vec<Complex64>) -> Result<Self, NumError> {
        if rows == 0 || cols == 0 {
            return Err(NumError::EmptyShape { rows, cols });
        }
        if entries.len() != rows * cols {
            return Err(NumError::Shape {
                rows,
                cols,
                len: entries.len(),
            });
        }
        if let Some(k) = entries.iter().position(|z| !(z.re.is_finite() && z.im.is_finite())) {
            return Err(NumError::NonFinite {
                row: k / cols,
                col: k % cols,
            });
        }
        Ok(Self {
            rows,
            cols,
            entries,
        })
    }

    /// Builds a real matrix from row slices.
    pub fn from_real_rows(rows: &[&[f64]]) -> Result<Self, NumError> {
        let r = rows.len();
        let c = rows.first().map_or(0, |row| row.len());
        let mut entries = Vec::with_capacity(r * c);
        for row in rows {
            if row.len() != c {
                return Err(NumError::Shape {
                    rows: r,
                    cols: c,
                    len: rows.iter().map(|x| x.len()).sum(),
                });
            }
            entries.extend(row.iter().map(|&x| Complex64::new(x, 0.0)));
        }
        Self::new(r, c, entries)
    }

    pub fn zeros(rows: usize, cols: usize) -> Result<Self, NumError> {
        Self::new(rows, cols, vec![Complex64::new(0.0, 0.0); rows * cols])
    }

    pub fn identity(n: usize) -> Result<Self, NumError> {
        let mut m = Self::zeros(n, n)?;
        for i in 0..n {
            m.entries[i * n + i] = Complex64::new(1.0, 0.0);
        }
        Ok(m)
    }

    pub fn diag(values: &[Complex64]) -> Result<Self, NumError> {
        let n = values.len();
        let mut m = Self::zeros(n, n)?;
        for (i, v) in values.iter().enumerate() {
            m.entries[i * n + i] = *v;
        }
        Self::new(n, n, m.entries)
    }

    pub fn diag_real(values: &[f64]) -> Result<Self, NumError> {
        let v: Vec<Complex64> = values.iter().map(|&x| Complex64::new(x, 0.0)).collect();
        Self::diag(&v)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn entries(&self) -> &[Complex64] {
        &self.entries
    }

    pub fn get(&self, row: usize, col: usize) -> Complex64 {
        self.entries[row * self.cols + col]
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    /// True when every entry has an exactly zero imaginary part.
    pub fn is_real(&self) -> bool {
        self.entries.iter().all(|z| z.im == 0.0)
    }

    fn require_square(&self) -> Result<usize, NumError> {
        if self.is_square() {
            Ok(self.rows)
        } else {
            Err(NumError::NotSquare {
                rows: self.rows,
                cols: self.cols,
            })
        }
    }

    /// Returns `self - z I`.
    pub fn shifted(&self, z: Complex64) -> Result<Self, NumError> {
        let n = self.require_square()?;
        let mut out = self.clone();
        for i in 0..n {
            out.entries[i * n + i] -= z;
        }
        Ok(out)
    }

    pub fn to_nalgebra(&self) -> DMatrix<Complex64> {
        DMatrix::from_row_slice(self.rows, self.cols, &self.entries)
    }

    fn to_nalgebra_real(&self) -> DMatrix<f64> {
        DMatrix::from_row_iterator(self.rows, self.cols, self.entries.iter().map(|z| z.re))
    }

    pub fn from_nalgebra(m: &DMatrix<Complex64>) -> Result<Self, NumError> {
        let mut entries = Vec::with_capacity(m.nrows() * m.ncols());
        for i in 0..m.nrows() {
            for j in 0..m.ncols() {
                entries.push(m[(i, j)]);
            }
        }
        Self::new(m.nrows(), m.ncols(), entries)
    }
}

impl fmt::Display for DenseMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[")?;
        for i in 0..self.rows {
            if i > 0 {
                write!(f, "; ")?;
            }
            for j in 0..self.cols {
                if j > 0 {
                    write!(f, ", ")?;
                }
                let z = self.get(i, j);
                if z.im == 0.0 {
                    write!(f, "{}", z.re)?;
                } else {
                    write!(f, "{}", z)?;
                }
            }
        }
        write!(f, "]")
    }
}

/// Computed eigenvalues together with a relative backward-error bound.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Spectrum {
    pub values: Vec<Complex64>,
    pub residual_bound: f64,
}

/// A Jordan block request: eigenvalue `lambda` with block size `rho`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct JordanBlockSpec {
    pub lambda: Complex64,
    pub rho: usize,
}

impl JordanBlockSpec {
    pub fn new(lambda: Complex64, rho: usize) -> Self {
        Self { lambda, rho }
    }

    pub fn real(lambda: f64, rho: usize) -> Self {
        Self::new(Complex64::new(lambda, 0.0), rho)
    }
}

/// Maximum absolute row sum.
pub fn inf_norm(m: &DenseMatrix) -> f64 {
    (0..m.rows)
        .map(|i| m.entries[i * m.cols..(i + 1) * m.cols].iter().map(|z| z.norm()).sum::<f64>())
        .fold(0.0, f64::max)
}

fn singular_values(m: &DenseMatrix) -> Result<Vec<f64>, NumError> {
    let svd = SVD::try_new(m.to_nalgebra(), false, false, f64::EPSILON, SVD_MAX_ITER).ok_or_else(
        || NumError::NonConvergence {
            op: "singular value decomposition",
            matrix: m.to_string(),
        },
    )?;
    Ok(svd.singular_values.iter().copied().collect())
}

/// Largest singular value.
pub fn two_norm(m: &DenseMatrix) -> Result<f64, NumError> {
    Ok(singular_values(m)?.into_iter().fold(0.0, f64::max))
}

/// Smallest singular value of a square matrix.
pub fn min_singular(m: &DenseMatrix) -> Result<f64, NumError> {
    m.require_square()?;
    Ok(singular_values(m)?.into_iter().fold(f64::INFINITY, f64::min))
}

/// Evaluates the spectral portrait `log10(||a||_2 ||(a - zI)^-1||_2)`.
///
/// Returns `f64::INFINITY` when `a - zI` is exactly singular.
pub fn portrait_value(a: &DenseMatrix, z: Complex64) -> Result<f64, NumError> {
    a.require_square()?;
    PortraitMap::new(a)?.value(z)
}

/// Precomputed evaluator for the spectral portrait of one matrix.
#[derive(Clone, Debug)]
pub struct PortraitMap {
    matrix: DMatrix<Complex64>,
    norm: f64,
    echo: String,
}

impl PortraitMap {
    pub fn new(a: &DenseMatrix) -> Result<Self, NumError> {
        a.require_square()?;
        Ok(Self {
            matrix: a.to_nalgebra(),
            norm: two_norm(a)?,
            echo: a.to_string(),
        })
    }

    pub fn norm(&self) -> f64 {
        self.norm
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    /// Smallest singular value of `a - zI`.
    pub fn sigma_min(&self, z: Complex64) -> Result<f64, NumError> {
        let mut shifted = self.matrix.clone();
        for i in 0..shifted.nrows() {
            shifted[(i, i)] -= z;
        }
        let svd = SVD::try_new(shifted, false, false, f64::EPSILON, SVD_MAX_ITER).ok_or_else(
            || NumError::NonConvergence {
                op: "singular value decomposition",
                matrix: format!("{} shifted by {}", self.echo, z),
            },
        )?;
        Ok(svd.singular_values.iter().copied().fold(f64::INFINITY, f64::min))
    }

    pub fn value(&self, z: Complex64) -> Result<f64, NumError> {
        let s = self.sigma_min(z)?;
        if s == 0.0 {
            return Ok(f64::INFINITY);
        }
        Ok(self.norm.log10() - s.log10())
    }
}

/// All eigenvalues of a square matrix via a Schur decomposition.
pub fn eigenvalues(m: &DenseMatrix) -> Result<Spectrum, NumError> {
    let n = m.require_square()?;
    let non_convergence = || NumError::NonConvergence {
        op: "Schur decomposition",
        matrix: m.to_string(),
    };
    let (values, backward) = if m.is_real() {
        let a = m.to_nalgebra_real();
        let schur = Schur::try_new(a.clone(), f64::EPSILON, SCHUR_MAX_ITER).ok_or_else(non_convergence)?;
        let values: Vec<Complex64> = schur.complex_eigenvalues().iter().copied().collect();
        let (q, t) = schur.unpack();
        let err = (&a - &q * &t * q.transpose()).norm();
        (values, relative(err, a.norm()))
    } else {
        let a = m.to_nalgebra();
        let schur = Schur::try_new(a.clone(), f64::EPSILON, SCHUR_MAX_ITER).ok_or_else(non_convergence)?;
        let (q, t) = schur.unpack();
        let values = triangular_eigenvalues(&t);
        let err = (&a - &q * &t * q.adjoint()).norm();
        (values, relative(err, a.norm()))
    };
    if values.iter().any(|z| !(z.re.is_finite() && z.im.is_finite())) {
        return Err(non_convergence());
    }
    Ok(Spectrum {
        values,
        residual_bound: backward + (n as f64) * f64::EPSILON,
    })
}

fn relative(err: f64, scale: f64) -> f64 {
    if scale > 0.0 {
        err / scale
    } else {
        err
    }
}

/// Reads eigenvalues off a (quasi-)triangular complex Schur factor.
fn triangular_eigenvalues(t: &DMatrix<Complex64>) -> Vec<Complex64> {
    let n = t.nrows();
    let mut out = Vec::with_capacity(n);
    let mut k = 0;
    while k < n {
        if k + 1 < n && t[(k + 1, k)].norm() > 0.0 {
            let (a, b, c, d) = (t[(k, k)], t[(k, k + 1)], t[(k + 1, k)], t[(k + 1, k + 1)]);
            let half_tr = (a + d) * 0.5;
            let disc = ((a - d) * 0.5).powi(2) + b * c;
            let root = disc.sqrt();
            out.push(half_tr + root);
            out.push(half_tr - root);
            k += 2;
        } else {
            out.push(t[(k, k)]);
            k += 1;
        }
    }
    out
}

/// Companion matrix of the monic polynomial with the given roots.
///
/// Coefficients occupy the first row and ones fill the subdiagonal, so
/// `(x-1)(x-2)` yields `[[3, -2], [1, 0]]`.
pub fn companion_matrix(roots: &[(Complex64, usize)]) -> Result<DenseMatrix, NumError> {
    let n: usize = roots.iter().map(|&(_, m)| m).sum();
    if roots.is_empty() || n == 0 {
        return Err(NumError::EmptyRoots);
    }
    // coeffs[k] multiplies x^k; start from the constant polynomial 1.
    let mut coeffs = vec![Complex64::new(1.0, 0.0)];
    for &(root, mult) in roots {
        for _ in 0..mult {
            let mut next = vec![Complex64::new(0.0, 0.0); coeffs.len() + 1];
            for (k, &c) in coeffs.iter().enumerate() {
                next[k + 1] += c;
                next[k] -= root * c;
            }
            coeffs = next;
        }
    }
    let mut entries = vec![Complex64::new(0.0, 0.0); n * n];
    for j in 0..n {
        entries[j] = -coeffs[n - 1 - j];
    }
    for i in 1..n {
        entries[i * n + i - 1] = Complex64::new(1.0, 0.0);
    }
    DenseMatrix::new(n, n, entries)
}

/// Convenience wrapper for real roots.
pub fn companion_matrix_real(roots: &[(f64, usize)]) -> Result<DenseMatrix, NumError> {
    let r: Vec<(Complex64, usize)> = roots.iter().map(|&(x, m)| (Complex64::new(x, 0.0), m)).collect();
    companion_matrix(&r)
}

/// Block-diagonal Jordan matrix for the given blocks.
pub fn jordan_matrix(blocks: &[JordanBlockSpec]) -> Result<DenseMatrix, NumError> {
    if blocks.is_empty() || blocks.iter().any(|b| b.rho == 0) {
        return Err(NumError::InvalidBlocks);
    }
    let n: usize = blocks.iter().map(|b| b.rho).sum();
    let mut entries = vec![Complex64::new(0.0, 0.0); n * n];
    let mut offset = 0;
    for b in blocks {
        for k in 0..b.rho {
            let i = offset + k;
            entries[i * n + i] = b.lambda;
            if k + 1 < b.rho {
                entries[i * n + i + 1] = Complex64::new(1.0, 0.0);
            }
        }
        offset += b.rho;
    }
    DenseMatrix::new(n, n, entries)
}

/// Builds `B J B^-1` for a random real basis `B` with condition number at
/// most `basis_condition_cap`.
///
/// `B = I + t G / ||G||_2` with Gaussian `G` and `t = (cap-1)/(cap+1)`, so
/// `cond(B) <= (1+t)/(1-t) = cap`. A cap close to 1 reproduces `J` itself.
pub fn synth_jordan(
    blocks: &[JordanBlockSpec],
    basis_seed: u64,
    basis_condition_cap: f64,
) -> Result<DenseMatrix, NumError> {
    if !(basis_condition_cap > 1.0) || !basis_condition_cap.is_finite() {
        return Err(NumError::InvalidConditionCap(basis_condition_cap));
    }
    let j = jordan_matrix(blocks)?.to_nalgebra();
    let n = j.nrows();
    let t = (basis_condition_cap - 1.0) / (basis_condition_cap + 1.0);
    let mut rng = ChaCha8Rng::seed_from_u64(basis_seed);
    for _ in 0..SYNTH_MAX_ATTEMPTS {
        let g = DMatrix::<f64>::from_fn(n, n, |_, _| StandardNormal.sample(&mut rng));
        let gsv = g.clone().singular_values();
        let gnorm = gsv.max();
        if !(gnorm > 0.0) {
            continue;
        }
        let b = DMatrix::<f64>::identity(n, n) + g * (t / gnorm);
        let sv = b.clone().singular_values();
        let cond = sv.max() / sv.min();
        if !(cond.is_finite() && cond <= basis_condition_cap * (1.0 + 1e-9)) {
            continue;
        }
        let Some(b_inv) = b.clone().try_inverse() else {
            continue;
        };
        let bc = b.map(|x| Complex64::new(x, 0.0));
        let bic = b_inv.map(|x| Complex64::new(x, 0.0));
        let a = &bc * &j * &bic;
        return DenseMatrix::from_nalgebra(&a);
    }
    Err(NumError::ConditionCapExceeded {
        cap: basis_condition_cap,
        attempts: SYNTH_MAX_ATTEMPTS,
    })
}
