//! Small dense linear-algebra helpers on top of `nalgebra`.

use nalgebra::DMatrix;

/// Spectral (operator 2-) norm: the largest singular value.
pub fn op_norm(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    if m.nrows() == 1 && m.ncols() == 1 {
        return m[(0, 0)].abs();
    }
    m.singular_values().iter().copied().fold(0.0, f64::max)
}

/// Largest eigenvalue of a symmetric matrix; only the lower triangle is read.
pub fn sym_max_eigenvalue(s: &DMatrix<f64>) -> f64 {
    if s.nrows() == 1 {
        return s[(0, 0)];
    }
    s.clone().symmetric_eigen().eigenvalues.iter().copied().fold(f64::NEG_INFINITY, f64::max)
}

/// 2-norm condition number; infinite when the matrix is singular.
pub fn condition_number(m: &DMatrix<f64>) -> f64 {
    let sv = m.singular_values();
    let max = sv.iter().copied().fold(0.0, f64::max);
    let min = sv.iter().copied().fold(f64::INFINITY, f64::min);
    if min == 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

/// Builds a matrix from a row-major flat slice.
pub fn from_row_slice(n: usize, m: usize, data: &[f64]) -> DMatrix<f64> {
    DMatrix::from_row_slice(n, m, data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn norms_of_simple_matrices() {
        let m = from_row_slice(2, 2, &[0.0, 2.0, 0.0, 0.0]);
        assert!((op_norm(&m) - 2.0).abs() < 1e-14);
        let s = from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!((sym_max_eigenvalue(&s) - 3.0).abs() < 1e-14);
        assert!((condition_number(&s) - 3.0).abs() < 1e-12);
    }
}
