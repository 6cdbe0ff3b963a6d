use alloc::vec::Vec;

use super::{sym_eig, sym_eigenvalues, EigDecomposition, Matrix, SymMatrix};
use crate::math::{abs, ln, sqrt};
use crate::{Error, Result};

/// Eigenvalues at or below `PD_FLOOR_RELATIVE * lambda_max` make a matrix
/// count as not positive definite. No regularisation is applied.
pub const PD_FLOOR_RELATIVE: f64 = 1e-12;

/// Pivots below `LU_PIVOT_RELATIVE * max|entry|` are treated as singular.
const LU_PIVOT_RELATIVE: f64 = 1e-14;

/// Spectral functions of a positive definite matrix.
#[derive(Clone, Debug)]
pub struct PdFactors {
    pub sqrt: SymMatrix,
    pub inv_sqrt: SymMatrix,
    pub inv: SymMatrix,
    pub eig: EigDecomposition,
}

fn check_pd(eig: &EigDecomposition) -> Result<()> {
    let n = eig.eigenvalues.len();
    if n == 0 {
        return Ok(());
    }
    let max = eig.max_eigenvalue();
    let min = eig.min_eigenvalue();
    let floor = PD_FLOOR_RELATIVE * max.max(0.0);
    if max <= 0.0 || min <= floor {
        return Err(Error::NotPositiveDefinite {
            eigenvalue: min,
            floor,
        });
    }
    Ok(())
}

/// Square root, inverse square root and inverse of a PD matrix.
pub fn pd_factors(a: &SymMatrix) -> Result<PdFactors> {
    let eig = sym_eig(a)?;
    check_pd(&eig)?;
    Ok(PdFactors {
        sqrt: eig.map_spectrum(sqrt),
        inv_sqrt: eig.map_spectrum(|l| 1.0 / sqrt(l)),
        inv: eig.map_spectrum(|l| 1.0 / l),
        eig,
    })
}

/// Unique symmetric PD square root and its inverse.
pub fn pd_sqrt(a: &SymMatrix) -> Result<(SymMatrix, SymMatrix)> {
    let f = pd_factors(a)?;
    Ok((f.sqrt, f.inv_sqrt))
}

/// Lower-triangular Cholesky factor `A = L L^T`.
#[derive(Clone, Debug)]
pub struct Cholesky {
    l: Matrix,
}

impl Cholesky {
    pub fn new(a: &SymMatrix) -> Result<Self> {
        let n = a.dim();
        let mut l = Matrix::zeros(n, n);
        for j in 0..n {
            let mut diag = a[(j, j)];
            for k in 0..j {
                diag -= l[(j, k)] * l[(j, k)];
            }
            if diag <= 0.0 || !diag.is_finite() {
                let min = sym_eigenvalues(a)
                    .ok()
                    .and_then(|ev| ev.first().copied())
                    .unwrap_or(diag);
                return Err(Error::NotPositiveDefinite {
                    eigenvalue: min,
                    floor: 0.0,
                });
            }
            let ljj = sqrt(diag);
            l[(j, j)] = ljj;
            for i in j + 1..n {
                let mut s = a[(i, j)];
                for k in 0..j {
                    s -= l[(i, k)] * l[(j, k)];
                }
                l[(i, j)] = s / ljj;
            }
        }
        Ok(Cholesky { l })
    }

    pub fn dim(&self) -> usize {
        self.l.rows()
    }

    /// Solves `A x = b`.
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let mut x = b.to_vec();
        self.solve_in_place(&mut x);
        x
    }

    pub fn solve_in_place(&self, x: &mut [f64]) {
        let n = self.dim();
        assert_eq!(x.len(), n, "cholesky solve dimension mismatch");
        let l = &self.l;
        for i in 0..n {
            let mut s = x[i];
            for k in 0..i {
                s -= l[(i, k)] * x[k];
            }
            x[i] = s / l[(i, i)];
        }
        for i in (0..n).rev() {
            let mut s = x[i];
            for k in i + 1..n {
                s -= l[(k, i)] * x[k];
            }
            x[i] = s / l[(i, i)];
        }
    }

    pub fn log_det(&self) -> f64 {
        2.0 * (0..self.dim()).map(|i| ln(self.l[(i, i)])).sum::<f64>()
    }
}

/// LU factorisation with partial pivoting, `P A = L U`.
#[derive(Clone, Debug)]
pub struct Lu {
    lu: Matrix,
    perm: Vec<usize>,
}

impl Lu {
    pub fn new(a: &Matrix) -> Result<Self> {
        if !a.is_square() {
            return Err(Error::DimensionMismatch {
                expected: a.rows(),
                found: a.cols(),
            });
        }
        let n = a.rows();
        let tol = LU_PIVOT_RELATIVE * a.max_abs();
        let mut lu = a.clone();
        let mut perm: Vec<usize> = (0..n).collect();
        for k in 0..n {
            let (p, pivot) = (k..n)
                .map(|i| (i, abs(lu[(i, k)])))
                .fold((k, -1.0), |best, cur| if cur.1 > best.1 { cur } else { best });
            if pivot <= tol || !pivot.is_finite() {
                return Err(Error::Singular { column: k, pivot });
            }
            if p != k {
                perm.swap(p, k);
                for j in 0..n {
                    let t = lu[(p, j)];
                    lu[(p, j)] = lu[(k, j)];
                    lu[(k, j)] = t;
                }
            }
            let inv = 1.0 / lu[(k, k)];
            for i in k + 1..n {
                let f = lu[(i, k)] * inv;
                lu[(i, k)] = f;
                if f == 0.0 {
                    continue;
                }
                let (upper, lower) = lu.as_mut_slice().split_at_mut(i * n);
                let row_k = &upper[k * n + k + 1..k * n + n];
                let row_i = &mut lower[k + 1..n];
                for (x, &y) in row_i.iter_mut().zip(row_k) {
                    *x -= f * y;
                }
            }
        }
        Ok(Lu { lu, perm })
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let n = self.lu.rows();
        assert_eq!(b.len(), n, "lu solve dimension mismatch");
        let mut x: Vec<f64> = self.perm.iter().map(|&p| b[p]).collect();
        for i in 0..n {
            let row = self.lu.row(i);
            let s: f64 = row[..i].iter().zip(&x[..i]).map(|(a, b)| a * b).sum();
            x[i] -= s;
        }
        for i in (0..n).rev() {
            let row = self.lu.row(i);
            let s: f64 = row[i + 1..].iter().zip(&x[i + 1..]).map(|(a, b)| a * b).sum();
            x[i] = (x[i] - s) / row[i];
        }
        x
    }
}
