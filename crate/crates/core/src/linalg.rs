//! Small dense linear algebra: a row-major matrix, a cyclic Jacobi
//! eigensolver for symmetric matrices and a Cholesky solver.

use std::ops::{Index, IndexMut};

/// Row-major dense `f64` matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    /// Panics if `data.len() != rows * cols`.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "matrix data length");
        Self { rows, cols, data }
    }

    /// Builds a matrix from equal-length rows. Panics on ragged input.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Self {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            assert_eq!(r.as_ref().len(), cols, "ragged rows");
            data.extend_from_slice(r.as_ref());
        }
        Self {
            rows: rows.len(),
            cols,
            data,
        }
    }

    pub fn diag(values: &[f64]) -> Self {
        let mut m = Self::zeros(values.len(), values.len());
        for (i, &v) in values.iter().enumerate() {
            m[(i, i)] = v;
        }
        m
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.cols.max(1)).take(self.rows)
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.iter_rows().map(<[f64]>::to_vec).collect()
    }

    pub fn transpose(&self) -> Matrix {
        let mut t = Matrix::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t[(j, i)] = self[(i, j)];
            }
        }
        t
    }

    /// Panics on shape mismatch.
    pub fn matmul(&self, other: &Matrix) -> Matrix {
        assert_eq!(self.cols, other.rows, "matmul shape");
        let mut out = Matrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            let out_row = &mut out.data[i * other.cols..(i + 1) * other.cols];
            for (k, &a) in self.row(i).iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                for (o, &b) in out_row.iter_mut().zip(other.row(k)) {
                    *o += a * b;
                }
            }
        }
        out
    }

    /// `self · v`.
    pub fn mul_vec(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(self.cols, v.len(), "mul_vec shape");
        self.iter_rows().map(|r| dot(r, v)).collect()
    }

    pub fn trace(&self) -> f64 {
        (0..self.rows.min(self.cols)).map(|i| self[(i, i)]).sum()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Largest absolute elementwise difference. Panics on shape mismatch.
    pub fn max_abs_diff(&self, other: &Matrix) -> f64 {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        self.data
            .iter()
            .zip(&other.data)
            .fold(0.0, |m, (a, b)| m.max((a - b).abs()))
    }

    /// Largest `|a_ij - a_ji|`; infinite for non-square input.
    pub fn asymmetry(&self) -> f64 {
        if self.rows != self.cols {
            return f64::INFINITY;
        }
        let mut worst = 0.0f64;
        for i in 0..self.rows {
            for j in i + 1..self.cols {
                worst = worst.max((self[(i, j)] - self[(j, i)]).abs());
            }
        }
        worst
    }
}

impl Index<(usize, usize)> for Matrix {
    type Output = f64;
    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.cols + j]
    }
}

impl IndexMut<(usize, usize)> for Matrix {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.cols + j]
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Raw output of [`jacobi_eigen`]: eigenvalues in the solver's own column
/// order and the matching eigenvectors as the columns of `vectors`.
#[derive(Debug, Clone)]
pub struct JacobiResult {
    pub values: Vec<f64>,
    pub vectors: Matrix,
    pub sweeps: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoConvergence {
    pub sweeps: usize,
    pub off_diagonal: f64,
    pub threshold: f64,
}

/// Cyclic (row-by-row) Jacobi eigendecomposition of a symmetric matrix.
///
/// Iterates until the off-diagonal Frobenius norm is at most
/// `rel_tol * scale`, where `scale` is `|trace|`, or the Frobenius norm when
/// that is larger (they agree for positive semidefinite input).
pub fn jacobi_eigen(
    a: &Matrix,
    rel_tol: f64,
    max_sweeps: usize,
) -> Result<JacobiResult, NoConvergence> {
    assert_eq!(a.rows(), a.cols(), "jacobi needs a square matrix");
    let n = a.rows();
    let mut m = a.clone();
    let mut v = Matrix::identity(n);

    let frob = m.as_slice().iter().map(|x| x * x).sum::<f64>().sqrt();
    let threshold = rel_tol * m.trace().abs().max(frob);

    let off_norm = |m: &Matrix| -> f64 {
        let mut s = 0.0;
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    s += m[(i, j)] * m[(i, j)];
                }
            }
        }
        s.sqrt()
    };

    let mut sweeps = 0;
    loop {
        let off = off_norm(&m);
        if off <= threshold {
            break;
        }
        if sweeps == max_sweeps {
            return Err(NoConvergence {
                sweeps,
                off_diagonal: off,
                threshold,
            });
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = m[(p, q)];
                if apq == 0.0 {
                    continue;
                }
                let theta = (m[(q, q)] - m[(p, p)]) / (2.0 * apq);
                let t = if theta.abs() > 1e150 {
                    0.5 / theta
                } else {
                    theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt())
                };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                // M <- M J
                for k in 0..n {
                    let mkp = m[(k, p)];
                    let mkq = m[(k, q)];
                    m[(k, p)] = c * mkp - s * mkq;
                    m[(k, q)] = s * mkp + c * mkq;
                }
                // M <- J^T M
                for k in 0..n {
                    let mpk = m[(p, k)];
                    let mqk = m[(q, k)];
                    m[(p, k)] = c * mpk - s * mqk;
                    m[(q, k)] = s * mpk + c * mqk;
                }
                m[(p, q)] = 0.0;
                m[(q, p)] = 0.0;
                for k in 0..n {
                    let vkp = v[(k, p)];
                    let vkq = v[(k, q)];
                    v[(k, p)] = c * vkp - s * vkq;
                    v[(k, q)] = s * vkp + c * vkq;
                }
            }
        }
        sweeps += 1;
    }

    Ok(JacobiResult {
        values: (0..n).map(|i| m[(i, i)]).collect(),
        vectors: v,
        sweeps,
    })
}

/// Solves `A x = b` for symmetric positive definite `A`.
///
/// Returns `None` when a pivot is not strictly positive.
pub fn cholesky_solve(a: &Matrix, b: &[f64]) -> Option<Vec<f64>> {
    let n = a.rows();
    assert_eq!(a.cols(), n);
    assert_eq!(b.len(), n);
    let mut l = Matrix::zeros(n, n);
    for i in 0..n {
        for j in 0..=i {
            let mut s = a[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            if i == j {
                if !(s > 0.0) || !s.is_finite() {
                    return None;
                }
                l[(i, i)] = s.sqrt();
            } else {
                l[(i, j)] = s / l[(j, j)];
            }
        }
    }
    let mut y = vec![0.0; n];
    for i in 0..n {
        let mut s = b[i];
        for k in 0..i {
            s -= l[(i, k)] * y[k];
        }
        y[i] = s / l[(i, i)];
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let mut s = y[i];
        for k in i + 1..n {
            s -= l[(k, i)] * x[k];
        }
        x[i] = s / l[(i, i)];
    }
    Some(x)
}

/// Modified Gram–Schmidt on the rows of `m`. Returns `None` if the rows are
/// numerically dependent.
pub fn orthonormalize_rows(m: &Matrix) -> Option<Matrix> {
    let mut q = m.clone();
    for i in 0..q.rows() {
        for j in 0..i {
            let proj = dot(q.row(i), q.row(j));
            let (head, tail) = q.data.split_at_mut(i * q.cols);
            let rj = &head[j * q.cols..(j + 1) * q.cols];
            for (x, &y) in tail[..q.cols].iter_mut().zip(rj) {
                *x -= proj * y;
            }
        }
        let norm = dot(q.row(i), q.row(i)).sqrt();
        if !(norm > 1e-12) {
            return None;
        }
        q.row_mut(i).iter_mut().for_each(|x| *x /= norm);
    }
    Some(q)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SplitMix64;

    fn random_spd(n: usize, seed: u64) -> Matrix {
        let mut rng = SplitMix64::new(seed);
        let a = Matrix::from_vec(n, n, (0..n * n).map(|_| rng.next_normal()).collect());
        a.transpose().matmul(&a)
    }

    #[test]
    fn jacobi_reconstructs_random_spd() {
        for seed in 0..5 {
            let a = random_spd(10, seed);
            let r = jacobi_eigen(&a, 1e-12, 100).unwrap();
            let recon = r
                .vectors
                .matmul(&Matrix::diag(&r.values))
                .matmul(&r.vectors.transpose());
            let max_l = r.values.iter().cloned().fold(f64::MIN, f64::max);
            assert!(recon.max_abs_diff(&a) <= 1e-8 * max_l);
            let vvt = r.vectors.matmul(&r.vectors.transpose());
            assert!(vvt.max_abs_diff(&Matrix::identity(10)) <= 1e-8);
        }
    }

    #[test]
    fn jacobi_on_diagonal_is_immediate() {
        let r = jacobi_eigen(&Matrix::diag(&[4.0, 1.0]), 1e-12, 100).unwrap();
        assert_eq!(r.sweeps, 0);
        assert_eq!(r.values, vec![4.0, 1.0]);
    }

    #[test]
    fn jacobi_reports_budget_exhaustion() {
        let a = random_spd(6, 1);
        let err = jacobi_eigen(&a, 1e-12, 0).unwrap_err();
        assert_eq!(err.sweeps, 0);
        assert!(err.off_diagonal > err.threshold);
    }

    #[test]
    fn cholesky_matches_product() {
        let a = random_spd(7, 3);
        let b: Vec<f64> = (0..7).map(|i| i as f64 - 3.0).collect();
        let x = cholesky_solve(&a, &b).unwrap();
        let ax = a.mul_vec(&x);
        for (u, v) in ax.iter().zip(&b) {
            assert!((u - v).abs() < 1e-9);
        }
        assert!(cholesky_solve(&Matrix::diag(&[1.0, -1.0]), &[1.0, 1.0]).is_none());
    }

    #[test]
    fn gram_schmidt_gives_orthonormal_rows() {
        let mut rng = SplitMix64::new(8);
        let m = Matrix::from_vec(5, 5, (0..25).map(|_| rng.next_normal()).collect());
        let q = orthonormalize_rows(&m).unwrap();
        assert!(q.matmul(&q.transpose()).max_abs_diff(&Matrix::identity(5)) < 1e-12);
        assert!(orthonormalize_rows(&Matrix::zeros(2, 2)).is_none());
    }
}
