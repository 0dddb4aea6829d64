//! Small dense helpers shared by the solvers.

use nalgebra::{DMatrix, DVector};

/// `max(v_i, 0)` componentwise, reported as the ∞-norm of the positive part.
pub fn pos_inf_norm(v: &DVector<f64>) -> f64 {
    v.iter().fold(0.0_f64, |acc, &x| acc.max(x))
}

pub fn l1_norm(v: &DVector<f64>) -> f64 {
    v.iter().map(|x| x.abs()).sum()
}

pub fn inf_norm(v: &DVector<f64>) -> f64 {
    v.iter().fold(0.0_f64, |acc, &x| acc.max(x.abs()))
}

pub fn all_finite(v: &DVector<f64>) -> bool {
    v.iter().all(|x| x.is_finite())
}

/// Spectral norm estimate of `m` by power iteration on `mᵀm`.
///
/// The start vector is all-ones, so the estimate is deterministic.
pub fn spectral_norm(m: &DMatrix<f64>, iters: usize) -> f64 {
    if m.nrows() == 0 || m.ncols() == 0 {
        return 0.0;
    }
    let mut v = DVector::from_element(m.ncols(), 1.0 / (m.ncols() as f64).sqrt());
    let mut sigma = 0.0;
    for _ in 0..iters {
        let w = m * &v;
        let z = m.tr_mul(&w);
        let nz = z.norm();
        if nz == 0.0 {
            return w.norm();
        }
        sigma = nz.sqrt();
        v = z / nz;
    }
    // ‖m v‖ for the final unit vector is a lower estimate; use it when it is larger
    sigma.max((m * &v).norm())
}

/// Spectral norm of a symmetric matrix via power iteration on the matrix itself.
pub fn sym_spectral_norm(m: &DMatrix<f64>, iters: usize) -> f64 {
    let n = m.nrows();
    if n == 0 {
        return 0.0;
    }
    let mut v = DVector::from_element(n, 1.0 / (n as f64).sqrt());
    let mut est = 0.0;
    for _ in 0..iters {
        let w = m * &v;
        let nw = w.norm();
        if nw == 0.0 {
            return 0.0;
        }
        est = nw;
        v = w / nw;
    }
    est
}
