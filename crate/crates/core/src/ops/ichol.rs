use crate::error::{Error, Result};

use super::factor::TriangularFactor;
use super::sparse::{CooBuilder, CsrMatrix};

/// Zero-fill incomplete Cholesky factor together with the diagonal shift
/// that was needed for it to exist.
#[derive(Debug, Clone)]
pub struct IncompleteCholesky {
    pub factor: TriangularFactor,
    pub shift: f64,
}

const MAX_SHIFT_ATTEMPTS: usize = 40;

/// IC(0) of a symmetric positive definite matrix: `L Lᵀ ≈ A` with `L`
/// restricted to the lower pattern of `A`.
///
/// On a nonpositive pivot the factorization is retried on `A + s I`, with
/// `s` starting at `1e-3 * mean(diag A)` and doubling.
pub fn incomplete_cholesky(a: &CsrMatrix) -> Result<IncompleteCholesky> {
    if a.rows() != a.cols() {
        return Err(Error::InvalidArgument("IC(0) needs a square matrix".into()));
    }
    let n = a.rows();
    let mean_diag = a.diagonal().iter().sum::<f64>() / n.max(1) as f64;
    let mut shift = 0.0;
    let mut last_err = None;
    for attempt in 0..=MAX_SHIFT_ATTEMPTS {
        match ic0(a, shift) {
            Ok(lower) => {
                return Ok(IncompleteCholesky {
                    factor: TriangularFactor::new(lower)?,
                    shift,
                })
            }
            Err(e) => last_err = Some(e),
        }
        shift = if attempt == 0 {
            1e-3 * mean_diag
        } else {
            shift * 2.0
        };
    }
    Err(last_err.unwrap())
}

fn ic0(a: &CsrMatrix, shift: f64) -> Result<CsrMatrix> {
    let n = a.rows();
    // rows of L as (col, value), sorted, diagonal last
    let mut rows: Vec<Vec<(usize, f64)>> = Vec::with_capacity(n);
    let mut work = vec![0.0; n];
    let mut present = vec![false; n];
    for i in 0..n {
        let (cols, vals) = a.row(i);
        let mut row: Vec<(usize, f64)> = cols
            .iter()
            .zip(vals)
            .filter(|(&j, _)| j <= i)
            .map(|(&j, &v)| (j, if j == i { v + shift } else { v }))
            .collect();
        if row.last().map(|e| e.0) != Some(i) {
            return Err(Error::NotPositiveDefinite { row: i, pivot: 0.0 });
        }
        for &(j, _) in &row {
            present[j] = true;
        }
        let mut diag_sum = 0.0;
        for e in 0..row.len() - 1 {
            let (j, aij) = row[e];
            let mut s = aij;
            let lrow = &rows[j];
            let (&(_, ljj), off) = lrow.split_last().unwrap();
            for &(m, ljm) in off {
                if present[m] {
                    s -= work[m] * ljm;
                }
            }
            let lij = s / ljj;
            work[j] = lij;
            row[e].1 = lij;
            diag_sum += lij * lij;
        }
        let d = row.last().unwrap().1 - diag_sum;
        for &(j, _) in &row {
            present[j] = false;
            work[j] = 0.0;
        }
        if d <= 0.0 || !d.is_finite() {
            return Err(Error::NotPositiveDefinite { row: i, pivot: d });
        }
        row.last_mut().unwrap().1 = d.sqrt();
        rows.push(row);
    }
    let nnz = rows.iter().map(|r| r.len()).sum();
    let mut b = CooBuilder::with_capacity(n, n, nnz);
    for (i, r) in rows.iter().enumerate() {
        for &(j, v) in r {
            b.push(i, j, v);
        }
    }
    Ok(b.build())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ops::{BandCholesky, PrecisionFactor};

    fn laplace2d(k: usize, shift: f64) -> CsrMatrix {
        let n = k * k;
        let mut b = CooBuilder::new(n, n);
        for r in 0..k {
            for c in 0..k {
                let i = r * k + c;
                b.push(i, i, 4.0 + shift);
                if c + 1 < k {
                    b.push(i, i + 1, -1.0);
                    b.push(i + 1, i, -1.0);
                }
                if r + 1 < k {
                    b.push(i, i + k, -1.0);
                    b.push(i + k, i, -1.0);
                }
            }
        }
        b.build()
    }

    #[test]
    fn exact_on_tridiagonal() {
        // no fill outside the pattern, so IC(0) is the exact factor
        let a = CsrMatrix::from_dense(3, 3, &[4.0, -1.0, 0.0, -1.0, 4.0, -1.0, 0.0, -1.0, 4.0]);
        let ic = incomplete_cholesky(&a).unwrap();
        assert_eq!(ic.shift, 0.0);
        let x = vec![1.0, -2.0, 0.5];
        let y = ic.factor.apply_precision(&x);
        let ax = a.matvec(&x);
        for i in 0..3 {
            assert!((y[i] - ax[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn matches_pattern_entries_on_2d_laplacian() {
        let a = laplace2d(6, 0.1);
        let ic = incomplete_cholesky(&a).unwrap();
        let l = ic.factor.lower();
        assert_eq!(l.nnz(), a.lower_triangle().nnz());
        // (L Lᵀ)_ij = A_ij on the pattern of A
        let n = a.rows();
        for (i, j, v) in a.triplets() {
            let (ci, vi) = l.row(i);
            let (cj, vj) = l.row(j);
            let mut s = 0.0;
            for (p, &c) in ci.iter().enumerate() {
                if let Ok(q) = cj.binary_search(&c) {
                    s += vi[p] * vj[q];
                }
            }
            assert!((s - v).abs() < 1e-10, "({i},{j}) of {n}");
        }
        // it is not the exact factor: fill is dropped
        let exact = BandCholesky::factor(&a).unwrap();
        let e: Vec<f64> = (0..n).map(|i| (i as f64).cos()).collect();
        let diff: f64 = ic
            .factor
            .solve_precision(&e)
            .iter()
            .zip(exact.solve(&e))
            .map(|(a, b)| (a - b).abs())
            .sum();
        assert!(diff > 1e-6);
    }

    #[test]
    fn shifts_when_pivot_fails() {
        // Kershaw's matrix: SPD, but IC(0) hits a negative pivot
        let a = CsrMatrix::from_dense(
            4,
            4,
            &[
                3.0, -2.0, 0.0, 2.0, -2.0, 3.0, -2.0, 0.0, 0.0, -2.0, 3.0, -2.0, 2.0, 0.0, -2.0, 3.0,
            ],
        );
        assert!(BandCholesky::factor(&a).is_ok());
        assert!(ic0(&a, 0.0).is_err());
        let ic = incomplete_cholesky(&a).unwrap();
        assert!(ic.shift > 0.0);
    }
}
