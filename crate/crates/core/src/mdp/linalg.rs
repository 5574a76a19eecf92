//! Fixed-point linear systems `x = b + A x` with sparse `A`.

use nalgebra::DMatrix;

/// Sparse rows of `A`: `rows[i]` lists `(j, A_ij)`.
pub(crate) type SparseRows = Vec<Vec<(usize, f64)>>;

#[derive(Debug)]
pub(crate) enum SolveFailure {
    Singular,
    NotConverged(usize),
}

/// Solves `x = b + A x` for every right-hand side in `rhs`.
///
/// Dense LU up to `dense_limit` unknowns, Gauss-Seidel beyond.
pub(crate) fn solve_fixed_point(
    rows: &SparseRows,
    rhs: &[Vec<f64>],
    dense_limit: usize,
    tol: f64,
    max_sweeps: usize,
) -> Result<Vec<Vec<f64>>, SolveFailure> {
    let n = rows.len();
    if n == 0 {
        return Ok(rhs.iter().map(|_| Vec::new()).collect());
    }
    if n <= dense_limit {
        dense(rows, rhs)
    } else {
        rhs.iter()
            .map(|b| gauss_seidel(rows, b, tol, max_sweeps))
            .collect()
    }
}

fn dense(rows: &SparseRows, rhs: &[Vec<f64>]) -> Result<Vec<Vec<f64>>, SolveFailure> {
    let n = rows.len();
    let mut m = DMatrix::<f64>::identity(n, n);
    for (i, row) in rows.iter().enumerate() {
        for &(j, c) in row {
            m[(i, j)] -= c;
        }
    }
    let lu = m.lu();
    // LU solves happily through near-singular pivots; reject those explicitly.
    let u = lu.u();
    let scale = u.diagonal().iter().fold(0.0f64, |acc, d| acc.max(d.abs())).max(1.0);
    if u.diagonal().iter().any(|d| d.abs() <= 1e-13 * scale) {
        return Err(SolveFailure::Singular);
    }
    let mut out = Vec::with_capacity(rhs.len());
    for b in rhs {
        let bv = nalgebra::DVector::from_column_slice(b);
        let x = lu.solve(&bv).ok_or(SolveFailure::Singular)?;
        if x.iter().any(|v| !v.is_finite()) {
            return Err(SolveFailure::Singular);
        }
        out.push(x.iter().copied().collect());
    }
    Ok(out)
}

fn gauss_seidel(rows: &SparseRows, b: &[f64], tol: f64, max_sweeps: usize) -> Result<Vec<f64>, SolveFailure> {
    let n = rows.len();
    let mut diag = vec![0.0; n];
    for (i, row) in rows.iter().enumerate() {
        for &(j, c) in row {
            if j == i {
                diag[i] += c;
            }
        }
        if diag[i] >= 1.0 - 1e-15 {
            return Err(SolveFailure::Singular);
        }
    }
    let mut x = b.to_vec();
    for sweep in 0..max_sweeps {
        let mut delta = 0.0f64;
        for i in 0..n {
            let mut acc = b[i];
            for &(j, c) in &rows[i] {
                if j != i {
                    acc += c * x[j];
                }
            }
            let new = acc / (1.0 - diag[i]);
            delta = delta.max((new - x[i]).abs());
            x[i] = new;
        }
        if !delta.is_finite() {
            return Err(SolveFailure::Singular);
        }
        if delta <= tol {
            return Ok(x);
        }
        if sweep + 1 == max_sweeps {
            break;
        }
    }
    Err(SolveFailure::NotConverged(max_sweeps))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn chain() -> SparseRows {
        // x0 = 1 + 0.5 x1, x1 = 2 + 0.5 x0  =>  x0 = 8/3, x1 = 10/3
        vec![vec![(1, 0.5)], vec![(0, 0.5)]]
    }

    #[test]
    fn dense_and_iterative_agree() {
        let b = vec![vec![1.0, 2.0]];
        let d = solve_fixed_point(&chain(), &b, 10, 1e-13, 10_000).unwrap();
        let g = solve_fixed_point(&chain(), &b, 0, 1e-13, 10_000).unwrap();
        assert!((d[0][0] - 8.0 / 3.0).abs() < 1e-12);
        assert!((d[0][1] - 10.0 / 3.0).abs() < 1e-12);
        assert!((g[0][0] - d[0][0]).abs() < 1e-11);
    }

    #[test]
    fn singular_system_is_rejected() {
        let rows = vec![vec![(1, 1.0)], vec![(0, 1.0)]];
        let b = vec![vec![-1.0, -1.0]];
        assert!(matches!(solve_fixed_point(&rows, &b, 10, 1e-12, 100), Err(SolveFailure::Singular)));
        assert!(solve_fixed_point(&rows, &b, 0, 1e-12, 100).is_err());
    }
}
