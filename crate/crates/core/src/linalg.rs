//! Dense helpers: Kronecker algebra, stationary vectors, norms.

use nalgebra::{DMatrix, DVector, RowDVector};

use crate::{Error, Result};

/// Default absolute tolerance for "row sums to zero".
pub const ROW_SUM_TOL: f64 = 1e-10;

pub fn kron_product(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    a.kronecker(b)
}

/// A⊕B = A⊗I + I⊗B.
pub fn kron_sum(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if !a.is_square() || !b.is_square() {
        return Err(Error::Validation(format!(
            "kron_sum needs square inputs, got {}x{} and {}x{}",
            a.nrows(),
            a.ncols(),
            b.nrows(),
            b.ncols()
        )));
    }
    let ia = DMatrix::identity(a.nrows(), a.nrows());
    let ib = DMatrix::identity(b.nrows(), b.nrows());
    Ok(a.kronecker(&ib) + ia.kronecker(b))
}

/// Max-row-sum norm ‖A‖∞.
pub fn norm_inf(a: &DMatrix<f64>) -> f64 {
    a.row_iter()
        .map(|r| r.iter().map(|x| x.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

pub fn max_abs_row(v: &RowDVector<f64>) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Strong connectivity of the off-diagonal nonzero pattern.
pub fn is_irreducible(q: &DMatrix<f64>) -> bool {
    let n = q.nrows();
    if n <= 1 {
        return true;
    }
    let reach = |forward: bool| {
        let mut seen = vec![false; n];
        let mut stack = vec![0usize];
        seen[0] = true;
        while let Some(i) = stack.pop() {
            for j in 0..n {
                let w = if forward { q[(i, j)] } else { q[(j, i)] };
                if i != j && w != 0.0 && !seen[j] {
                    seen[j] = true;
                    stack.push(j);
                }
            }
        }
        seen.into_iter().all(|s| s)
    };
    reach(true) && reach(false)
}

/// First row index whose sum deviates from zero by more than `tol`.
pub fn bad_row_sum(q: &DMatrix<f64>, tol: f64) -> Option<(usize, f64)> {
    q.row_iter()
        .map(|r| r.sum())
        .enumerate()
        .find(|(_, s)| s.abs() > tol)
}

pub fn stationary_vector(q: &DMatrix<f64>) -> Result<RowDVector<f64>> {
    stationary_vector_with_tol(q, ROW_SUM_TOL)
}

/// Solve xQ = 0, xe = 1 by replacing one balance equation with normalization.
pub fn stationary_vector_with_tol(q: &DMatrix<f64>, tol: f64) -> Result<RowDVector<f64>> {
    let n = q.nrows();
    if !q.is_square() || n == 0 {
        return Err(Error::Validation(format!(
            "generator must be square and non-empty, got {}x{}",
            q.nrows(),
            q.ncols()
        )));
    }
    if let Some((i, s)) = bad_row_sum(q, tol) {
        return Err(Error::Validation(format!("generator row {i} sums to {s:e}, not 0")));
    }
    if !is_irreducible(q) {
        return Err(Error::Structural("generator is reducible".into()));
    }
    let mut a = q.transpose();
    for j in 0..n {
        a[(n - 1, j)] = 1.0;
    }
    let mut rhs = DVector::zeros(n);
    rhs[n - 1] = 1.0;
    let x = a
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::Structural("singular balance system".into()))?;
    let mut x = x.transpose();
    for v in x.iter_mut() {
        if *v < 0.0 && *v > -1e-13 {
            *v = 0.0;
        }
    }
    if x.iter().any(|v| *v < 0.0 || !v.is_finite()) {
        return Err(Error::Structural("stationary solve produced negative mass".into()));
    }
    let s = x.sum();
    Ok(x / s)
}

/// Inverse by LU with partial pivoting.
pub fn inverse(a: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    a.clone()
        .lu()
        .try_inverse()
        .filter(|m| m.iter().all(|v| v.is_finite()))
        .ok_or_else(|| Error::Numerical(format!("singular matrix: {what}")))
}

pub fn ones_col(n: usize) -> DVector<f64> {
    DVector::from_element(n, 1.0)
}

/// Row sums as a column vector.
pub fn row_sums(a: &DMatrix<f64>) -> DVector<f64> {
    a * ones_col(a.ncols())
}

/// Row-major nested vectors into a matrix.
pub fn from_rows(rows: &[Vec<f64>]) -> DMatrix<f64> {
    let r = rows.len();
    let c = rows.first().map_or(0, |x| x.len());
    DMatrix::from_fn(r, c, |i, j| rows[i][j])
}

pub fn to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

/// `out = x * m` for a row vector stored as a slice.
pub fn vec_mat_into(x: &[f64], m: &DMatrix<f64>, out: &mut [f64]) {
    debug_assert_eq!(x.len(), m.nrows());
    for o in out.iter_mut() {
        *o = 0.0;
    }
    for (i, &xi) in x.iter().enumerate() {
        if xi == 0.0 {
            continue;
        }
        for (j, o) in out.iter_mut().enumerate() {
            *o += xi * m[(i, j)];
        }
    }
}

/// `out += s * (x * m)`.
pub fn vec_mat_acc(x: &[f64], m: &DMatrix<f64>, s: f64, out: &mut [f64]) {
    for (i, &xi) in x.iter().enumerate() {
        let f = s * xi;
        if f == 0.0 {
            continue;
        }
        for (j, o) in out.iter_mut().enumerate() {
            *o += f * m[(i, j)];
        }
    }
}
