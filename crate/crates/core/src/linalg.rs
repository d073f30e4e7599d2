//! Small dense linear-algebra helpers shared by the solvers.

use nalgebra::{linalg::Cholesky, DMatrix, DVector, Dyn};

use crate::error::{IrlError, Result};

/// Smallest jitter added to a covariance diagonal.
pub const JITTER_START: f64 = 1e-10;
/// Largest jitter tried before a factorization is declared failed.
pub const JITTER_MAX: f64 = 1e-6;

/// Cholesky factor of `a + jitter·I`, escalating the jitter tenfold from
/// [`JITTER_START`] to [`JITTER_MAX`]. Returns the factor and the jitter used.
pub fn cholesky_with_jitter(a: &DMatrix<f64>) -> Result<(Cholesky<f64, Dyn>, f64)> {
    let mut jitter = JITTER_START;
    loop {
        let mut m = a.clone();
        for i in 0..m.nrows() {
            m[(i, i)] += jitter;
        }
        if let Some(c) = Cholesky::new(m) {
            return Ok((c, jitter));
        }
        jitter *= 10.0;
        if jitter > JITTER_MAX * (1.0 + 1e-9) {
            return Err(IrlError::numerical(format!(
                "cholesky of {}x{} matrix failed with jitter up to {JITTER_MAX:e}",
                a.nrows(),
                a.ncols()
            )));
        }
    }
}

/// Cholesky of a matrix expected to be positive definite, trying a few tiny
/// diagonal shifts before giving up. Used for Newton systems.
pub fn cholesky_spd(a: DMatrix<f64>) -> Option<Cholesky<f64, Dyn>> {
    if let Some(c) = Cholesky::new(a.clone()) {
        return Some(c);
    }
    let scale = (0..a.nrows()).map(|i| a[(i, i)].abs()).fold(0.0, f64::max).max(1.0);
    let mut shift = 1e-14 * scale;
    for _ in 0..6 {
        let mut m = a.clone();
        for i in 0..m.nrows() {
            m[(i, i)] += shift;
        }
        if let Some(c) = Cholesky::new(m) {
            return Some(c);
        }
        shift *= 100.0;
    }
    None
}

/// log-determinant from a Cholesky factor.
pub fn chol_logdet(c: &Cholesky<f64, Dyn>) -> f64 {
    let l = c.l_dirty();
    (0..l.nrows()).map(|i| l[(i, i)].ln()).sum::<f64>() * 2.0
}

pub fn inf_norm(v: &DVector<f64>) -> f64 {
    v.iter().fold(0.0_f64, |acc, x| acc.max(x.abs()))
}

/// `Aᵀ diag(w) A` for a dense row block `A`, computed through a scaled copy so
/// the product runs as one matrix multiplication.
pub fn weighted_gram(a: &DMatrix<f64>, w: &DVector<f64>) -> DMatrix<f64> {
    debug_assert_eq!(a.nrows(), w.len());
    let mut scaled_t = a.transpose();
    for (j, mut col) in scaled_t.column_iter_mut().enumerate() {
        col *= w[j].sqrt();
    }
    &scaled_t * scaled_t.transpose()
}

/// Dense `n×n` identity minus `gamma · p`.
pub fn discounted_system(p: &DMatrix<f64>, gamma: f64) -> DMatrix<f64> {
    let n = p.nrows();
    let mut a = -p * gamma;
    for i in 0..n {
        a[(i, i)] += 1.0;
    }
    a
}
