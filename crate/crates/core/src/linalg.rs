//! Dense linear-algebra helpers shared by the estimators.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};

use crate::error::{Error, Result};

/// Relative jitter added to the diagonal when a normal-matrix factorization fails.
pub const JITTER_SCALE: f64 = 1e-12;

/// Condition estimate above which a solve is reported as ill-conditioned.
pub const CONDITION_WARNING: f64 = 1e12;

/// Returns `(m + mᵀ) / 2`.
pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

pub fn is_finite_matrix(m: &DMatrix<f64>) -> bool {
    m.iter().all(|v| v.is_finite())
}

pub fn is_finite_vector(v: &DVector<f64>) -> bool {
    v.iter().all(|x| x.is_finite())
}

/// Smallest eigenvalue of the symmetric part of `m`.
pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    let eig = SymmetricEigen::new(symmetrize(m));
    eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min)
}

/// Induced 1-norm (max absolute column sum).
pub fn norm1(m: &DMatrix<f64>) -> f64 {
    m.column_iter()
        .map(|c| c.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Checks that `m` is square, symmetric (to a relative tolerance) and positive definite.
pub fn check_spd(m: &DMatrix<f64>, what: &str) -> Result<()> {
    if !m.is_square() {
        return Err(Error::contract(format!(
            "{what} must be square, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    if !is_finite_matrix(m) {
        return Err(Error::numeric(format!("{what} has non-finite entries")));
    }
    let scale = m.amax().max(f64::MIN_POSITIVE);
    let asym = (m - m.transpose()).amax();
    if asym > 1e-9 * scale {
        return Err(Error::numeric(format!(
            "{what} is not symmetric (max asymmetry {asym:e})"
        )));
    }
    if Cholesky::new(symmetrize(m)).is_none() {
        return Err(Error::numeric(format!("{what} is not positive definite")));
    }
    Ok(())
}

/// Inverse of a symmetric positive-definite matrix, symmetrized.
pub fn spd_inverse(m: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    check_spd(m, what)?;
    let chol = Cholesky::new(symmetrize(m))
        .ok_or_else(|| Error::numeric(format!("{what} is not positive definite")))?;
    Ok(symmetrize(&chol.inverse()))
}

/// Cholesky factorization of an SPD normal matrix, retried once with diagonal jitter.
pub struct SpdFactor {
    pub chol: Cholesky<f64, Dyn>,
    /// Whether jitter had to be added to factorize.
    pub jittered: bool,
}

impl SpdFactor {
    pub fn new(m: &DMatrix<f64>, what: &str) -> Result<Self> {
        if !is_finite_matrix(m) {
            return Err(Error::numeric(format!("{what} has non-finite entries")));
        }
        let sym = symmetrize(m);
        if let Some(chol) = Cholesky::new(sym.clone()) {
            return Ok(Self {
                chol,
                jittered: false,
            });
        }
        let dim = sym.nrows().max(1) as f64;
        let jitter = JITTER_SCALE * sym.trace().abs() / dim;
        let mut shifted = sym;
        for i in 0..shifted.nrows() {
            shifted[(i, i)] += jitter;
        }
        Cholesky::new(shifted)
            .map(|chol| Self {
                chol,
                jittered: true,
            })
            .ok_or_else(|| Error::numeric(format!("{what} is singular")))
    }

    pub fn solve(&self, rhs: &DMatrix<f64>) -> DMatrix<f64> {
        self.chol.solve(rhs)
    }

    pub fn solve_vec(&self, rhs: &DVector<f64>) -> DVector<f64> {
        self.chol.solve(rhs)
    }

    pub fn inverse(&self) -> DMatrix<f64> {
        symmetrize(&self.chol.inverse())
    }

    /// 1-norm condition number of the factored matrix.
    pub fn condition_1norm(&self, m: &DMatrix<f64>) -> f64 {
        norm1(m) * norm1(&self.chol.inverse())
    }
}

/// Block-diagonal matrix from square blocks.
pub fn block_diag(blocks: &[DMatrix<f64>]) -> DMatrix<f64> {
    let rows: usize = blocks.iter().map(|b| b.nrows()).sum();
    let cols: usize = blocks.iter().map(|b| b.ncols()).sum();
    let mut out = DMatrix::zeros(rows, cols);
    let (mut r, mut c) = (0, 0);
    for b in blocks {
        out.view_mut((r, c), (b.nrows(), b.ncols())).copy_from(b);
        r += b.nrows();
        c += b.ncols();
    }
    out
}

/// Relative Frobenius distance `‖a − b‖ / max(‖b‖, tiny)`.
pub fn rel_frobenius(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).norm() / b.norm().max(f64::MIN_POSITIVE)
}
