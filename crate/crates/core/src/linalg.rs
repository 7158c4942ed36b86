//! Small dense linear algebra: row-major matrices, partial-pivot LU,
//! Bunch-Kaufman LDLᵀ with inertia, and pivoted Cholesky for PSD matrices.
//!
//! Everything here is sized for distribution feeders (a few hundred
//! unknowns at most); no blocking or sparsity is attempted.

use std::ops::{Index, IndexMut};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::Scalar;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LinalgError {
    #[error("matrix is singular (zero pivot at column {column})")]
    Singular { column: usize },
    #[error("matrix is ill-conditioned (estimated 1-norm condition {condition:.3e})")]
    IllConditioned { condition: f64 },
    #[error("matrix is not square ({rows}x{cols})")]
    NotSquare { rows: usize, cols: usize },
    #[error("matrix is not positive semidefinite (pivot {value:.3e} at index {index})")]
    NotPsd { index: usize, value: f64 },
    #[error("matrix is not symmetric (entry ({row}, {col}) differs by {diff:.3e})")]
    NotSymmetric { row: usize, col: usize, diff: f64 },
}

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Scalar> Matrix<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![T::zero(); rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = T::one();
        }
        m
    }

    pub fn from_rows(rows: &[Vec<T>]) -> Self {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            assert_eq!(row.len(), c, "ragged rows");
            data.extend_from_slice(row);
        }
        Self { rows: r, cols: c, data }
    }

    pub fn from_diag(d: &[T]) -> Self {
        let mut m = Self::zeros(d.len(), d.len());
        for (i, &x) in d.iter().enumerate() {
            m[(i, i)] = x;
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

    #[inline]
    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [T] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn column(&self, j: usize) -> Vec<T> {
        (0..self.rows).map(|i| self[(i, j)]).collect()
    }

    pub fn to_rows(&self) -> Vec<Vec<T>> {
        (0..self.rows).map(|i| self.row(i).to_vec()).collect()
    }

    pub fn transpose(&self) -> Self {
        let mut t = Self::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t[(j, i)] = self[(i, j)];
            }
        }
        t
    }

    pub fn mul_vec(&self, x: &[T]) -> Vec<T> {
        assert_eq!(x.len(), self.cols);
        (0..self.rows)
            .map(|i| self.row(i).iter().zip(x).map(|(&a, &b)| a * b).sum())
            .collect()
    }

    /// `selfᵀ x`
    pub fn tr_mul_vec(&self, x: &[T]) -> Vec<T> {
        assert_eq!(x.len(), self.rows);
        let mut out = vec![T::zero(); self.cols];
        for (i, &xi) in x.iter().enumerate() {
            if xi == T::zero() {
                continue;
            }
            for (o, &a) in out.iter_mut().zip(self.row(i)) {
                *o += a * xi;
            }
        }
        out
    }

    pub fn matmul(&self, other: &Self) -> Self {
        assert_eq!(self.cols, other.rows);
        let mut out = Self::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(i, k)];
                if a == T::zero() {
                    continue;
                }
                let orow = other.row(k);
                for (o, &b) in out.row_mut(i).iter_mut().zip(orow) {
                    *o += a * b;
                }
            }
        }
        out
    }

    /// Maximum absolute column sum.
    pub fn norm1(&self) -> T {
        (0..self.cols)
            .map(|j| (0..self.rows).map(|i| self[(i, j)].abs()).sum::<T>())
            .fold(T::zero(), T::max)
    }

    pub fn max_abs(&self) -> T {
        self.data.iter().fold(T::zero(), |m, x| m.max(x.abs()))
    }

    pub fn is_symmetric(&self, tol: T) -> Result<(), LinalgError> {
        if self.rows != self.cols {
            return Err(LinalgError::NotSquare { rows: self.rows, cols: self.cols });
        }
        for i in 0..self.rows {
            for j in 0..i {
                let diff = (self[(i, j)] - self[(j, i)]).abs();
                if diff > tol {
                    return Err(LinalgError::NotSymmetric { row: i, col: j, diff: diff.to_f64_lossy() });
                }
            }
        }
        Ok(())
    }

    pub fn map<U: Scalar>(&self, f: impl Fn(T) -> U) -> Matrix<U> {
        Matrix { rows: self.rows, cols: self.cols, data: self.data.iter().map(|&x| f(x)).collect() }
    }

    pub fn scale(&self, s: T) -> Self {
        self.map(|x| x * s)
    }

    fn swap_rows(&mut self, a: usize, b: usize) {
        if a == b {
            return;
        }
        for j in 0..self.cols {
            self.data.swap(a * self.cols + j, b * self.cols + j);
        }
    }
}

impl<T> Index<(usize, usize)> for Matrix<T> {
    type Output = T;
    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &T {
        debug_assert!(i < self.rows && j < self.cols);
        &self.data[i * self.cols + j]
    }
}

impl<T> IndexMut<(usize, usize)> for Matrix<T> {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut T {
        debug_assert!(i < self.rows && j < self.cols);
        &mut self.data[i * self.cols + j]
    }
}

/// LU factorization with partial pivoting, `P A = L U`.
#[derive(Debug, Clone)]
pub struct Lu<T> {
    lu: Matrix<T>,
    perm: Vec<usize>,
    norm1: T,
}

impl<T: Scalar> Lu<T> {
    pub fn factor(mut a: Matrix<T>) -> Result<Self, LinalgError> {
        let n = a.rows();
        if n != a.cols() {
            return Err(LinalgError::NotSquare { rows: n, cols: a.cols() });
        }
        let norm1 = a.norm1();
        let tiny = T::epsilon() * norm1.max(T::min_positive_value());
        let mut perm: Vec<usize> = (0..n).collect();
        for k in 0..n {
            let (p, pmax) = (k..n)
                .map(|i| (i, a[(i, k)].abs()))
                .fold((k, -T::one()), |best, c| if c.1 > best.1 { c } else { best });
            if pmax <= tiny || !pmax.is_finite() {
                return Err(LinalgError::Singular { column: k });
            }
            a.swap_rows(k, p);
            perm.swap(k, p);
            let pivot = a[(k, k)];
            for i in k + 1..n {
                let f = a[(i, k)] / pivot;
                a[(i, k)] = f;
                if f == T::zero() {
                    continue;
                }
                for j in k + 1..n {
                    let u = a[(k, j)];
                    a[(i, j)] -= f * u;
                }
            }
        }
        Ok(Self { lu: a, perm, norm1 })
    }

    pub fn dim(&self) -> usize {
        self.perm.len()
    }

    pub fn solve(&self, b: &[T]) -> Vec<T> {
        let n = self.dim();
        assert_eq!(b.len(), n);
        let mut x: Vec<T> = self.perm.iter().map(|&p| b[p]).collect();
        for i in 0..n {
            let row = self.lu.row(i);
            let s: T = row[..i].iter().zip(&x[..i]).map(|(&l, &y)| l * y).sum();
            x[i] -= s;
        }
        for i in (0..n).rev() {
            let row = self.lu.row(i);
            let s: T = row[i + 1..].iter().zip(&x[i + 1..]).map(|(&u, &y)| u * y).sum();
            x[i] = (x[i] - s) / row[i];
        }
        x
    }

    /// Solves `Aᵀ x = b`.
    pub fn solve_transpose(&self, b: &[T]) -> Vec<T> {
        let n = self.dim();
        assert_eq!(b.len(), n);
        let mut y = b.to_vec();
        for i in 0..n {
            let mut s = y[i];
            for k in 0..i {
                s -= self.lu[(k, i)] * y[k];
            }
            y[i] = s / self.lu[(i, i)];
        }
        for i in (0..n).rev() {
            let mut s = y[i];
            for k in i + 1..n {
                s -= self.lu[(k, i)] * y[k];
            }
            y[i] = s;
        }
        let mut x = vec![T::zero(); n];
        for (i, &p) in self.perm.iter().enumerate() {
            x[p] = y[i];
        }
        x
    }

    pub fn inverse(&self) -> Matrix<T> {
        let n = self.dim();
        let mut inv = Matrix::zeros(n, n);
        let mut e = vec![T::zero(); n];
        for j in 0..n {
            e[j] = T::one();
            let col = self.solve(&e);
            e[j] = T::zero();
            for (i, v) in col.into_iter().enumerate() {
                inv[(i, j)] = v;
            }
        }
        inv
    }

    /// Hager/Higham estimate of `‖A⁻¹‖₁ ‖A‖₁`.
    pub fn condition_estimate(&self) -> T {
        let n = self.dim();
        if n == 0 {
            return T::one();
        }
        let nt = T::lit(n as f64);
        let mut x = vec![T::one() / nt; n];
        let mut est = T::zero();
        for _ in 0..5 {
            let y = self.solve(&x);
            let y1: T = y.iter().map(|v| v.abs()).sum();
            if y1 <= est {
                break;
            }
            est = y1;
            let xi: Vec<T> = y.iter().map(|v| if *v >= T::zero() { T::one() } else { -T::one() }).collect();
            let z = self.solve_transpose(&xi);
            let (jmax, zmax) = z
                .iter()
                .enumerate()
                .fold((0, -T::one()), |b, (j, v)| if v.abs() > b.1 { (j, v.abs()) } else { b });
            let ztx: T = z.iter().zip(&x).map(|(&a, &b)| a * b).sum();
            if zmax <= ztx {
                break;
            }
            x = vec![T::zero(); n];
            x[jmax] = T::one();
        }
        est * self.norm1
    }
}

/// Eigenvalue sign counts of a symmetric matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Inertia {
    pub positive: usize,
    pub negative: usize,
    pub zero: usize,
}

#[derive(Debug, Clone, Copy)]
enum Pivot<T> {
    One(T),
    Two(T, T, T),
}

/// Symmetric indefinite factorization `Pᵀ A P = L D Lᵀ` with Bunch-Kaufman
/// pivoting. `D` holds 1x1 and 2x2 blocks; the inertia of `A` is read off `D`.
#[derive(Debug, Clone)]
pub struct Ldlt<T> {
    l: Matrix<T>,
    pivots: Vec<(usize, Pivot<T>)>,
    perm: Vec<usize>,
    inertia: Inertia,
}

impl<T: Scalar> Ldlt<T> {
    /// Factors the symmetric matrix `a`; only the lower triangle is read.
    pub fn factor(a: &Matrix<T>) -> Result<Self, LinalgError> {
        let n = a.rows();
        if n != a.cols() {
            return Err(LinalgError::NotSquare { rows: n, cols: a.cols() });
        }
        let mut s = Matrix::zeros(n, n);
        for i in 0..n {
            for j in 0..=i {
                s[(i, j)] = a[(i, j)];
                s[(j, i)] = a[(i, j)];
            }
        }
        let zero_tol = T::epsilon() * T::lit(n as f64) * a.max_abs().max(T::min_positive_value());
        let alpha = (T::one() + T::lit(17.0).sqrt()) / T::lit(8.0);
        let mut l = Matrix::identity(n);
        let mut perm: Vec<usize> = (0..n).collect();
        let mut pivots = Vec::new();
        let mut inertia = Inertia::default();

        let swap = |s: &mut Matrix<T>, l: &mut Matrix<T>, perm: &mut Vec<usize>, k: usize, a: usize, b: usize| {
            if a == b {
                return;
            }
            s.swap_rows(a, b);
            for i in 0..n {
                let (x, y) = (s[(i, a)], s[(i, b)]);
                s[(i, a)] = y;
                s[(i, b)] = x;
            }
            for j in 0..k {
                let (x, y) = (l[(a, j)], l[(b, j)]);
                l[(a, j)] = y;
                l[(b, j)] = x;
            }
            perm.swap(a, b);
        };

        let mut k = 0;
        while k < n {
            let absakk = s[(k, k)].abs();
            let (imax, colmax) = (k + 1..n)
                .map(|i| (i, s[(i, k)].abs()))
                .fold((k, T::zero()), |b, c| if c.1 > b.1 { c } else { b });

            if absakk.max(colmax) <= zero_tol {
                inertia.zero += 1;
                pivots.push((k, Pivot::One(T::zero())));
                for i in k + 1..n {
                    l[(i, k)] = T::zero();
                }
                k += 1;
                continue;
            }

            let (kp, step) = if absakk >= alpha * colmax {
                (k, 1)
            } else {
                let rowmax = (k..n)
                    .filter(|&j| j != imax)
                    .map(|j| s[(imax, j)].abs())
                    .fold(T::zero(), T::max);
                if absakk * rowmax >= alpha * colmax * colmax {
                    (k, 1)
                } else if s[(imax, imax)].abs() >= alpha * rowmax {
                    (imax, 1)
                } else {
                    (imax, 2)
                }
            };

            if step == 1 {
                swap(&mut s, &mut l, &mut perm, k, k, kp);
                let d = s[(k, k)];
                for i in k + 1..n {
                    l[(i, k)] = s[(i, k)] / d;
                }
                for i in k + 1..n {
                    let li = l[(i, k)];
                    if li == T::zero() {
                        continue;
                    }
                    for j in k + 1..=i {
                        let v = s[(i, j)] - li * s[(j, k)];
                        s[(i, j)] = v;
                        s[(j, i)] = v;
                    }
                }
                if d > zero_tol {
                    inertia.positive += 1;
                } else if d < -zero_tol {
                    inertia.negative += 1;
                } else {
                    inertia.zero += 1;
                }
                pivots.push((k, Pivot::One(d)));
                k += 1;
            } else {
                swap(&mut s, &mut l, &mut perm, k, k + 1, kp);
                let (d11, d21, d22) = (s[(k, k)], s[(k + 1, k)], s[(k + 1, k + 1)]);
                let det = d11 * d22 - d21 * d21;
                for i in k + 2..n {
                    let (c1, c2) = (s[(i, k)], s[(i, k + 1)]);
                    l[(i, k)] = (c1 * d22 - c2 * d21) / det;
                    l[(i, k + 1)] = (c2 * d11 - c1 * d21) / det;
                }
                for i in k + 2..n {
                    let (li1, li2) = (l[(i, k)], l[(i, k + 1)]);
                    for j in k + 2..=i {
                        let v = s[(i, j)] - li1 * s[(j, k)] - li2 * s[(j, k + 1)];
                        s[(i, j)] = v;
                        s[(j, i)] = v;
                    }
                }
                let scale = d11.abs().max(d22.abs()).max(d21.abs());
                if det < -zero_tol * scale {
                    inertia.positive += 1;
                    inertia.negative += 1;
                } else if det > zero_tol * scale {
                    if d11 + d22 > T::zero() {
                        inertia.positive += 2;
                    } else {
                        inertia.negative += 2;
                    }
                } else {
                    inertia.zero += 1;
                    if d11 + d22 > T::zero() {
                        inertia.positive += 1;
                    } else {
                        inertia.negative += 1;
                    }
                }
                pivots.push((k, Pivot::Two(d11, d21, d22)));
                k += 2;
            }
        }
        Ok(Self { l, pivots, perm, inertia })
    }

    pub fn inertia(&self) -> Inertia {
        self.inertia
    }

    /// Solves `A x = b`. Fails if a zero pivot was encountered.
    pub fn solve(&self, b: &[T]) -> Result<Vec<T>, LinalgError> {
        let n = self.perm.len();
        assert_eq!(b.len(), n);
        let mut y: Vec<T> = self.perm.iter().map(|&p| b[p]).collect();
        for i in 0..n {
            let row = self.l.row(i);
            let s: T = row[..i].iter().zip(&y[..i]).map(|(&l, &v)| l * v).sum();
            y[i] -= s;
        }
        for &(k, piv) in &self.pivots {
            match piv {
                Pivot::One(d) => {
                    if d == T::zero() {
                        return Err(LinalgError::Singular { column: k });
                    }
                    y[k] /= d;
                }
                Pivot::Two(d11, d21, d22) => {
                    let det = d11 * d22 - d21 * d21;
                    if det == T::zero() {
                        return Err(LinalgError::Singular { column: k });
                    }
                    let (a, b) = (y[k], y[k + 1]);
                    y[k] = (d22 * a - d21 * b) / det;
                    y[k + 1] = (d11 * b - d21 * a) / det;
                }
            }
        }
        for i in (0..n).rev() {
            let mut s = T::zero();
            for j in i + 1..n {
                s += self.l[(j, i)] * y[j];
            }
            y[i] -= s;
        }
        let mut x = vec![T::zero(); n];
        for (i, &p) in self.perm.iter().enumerate() {
            x[p] = y[i];
        }
        Ok(x)
    }
}

/// Pivoted Cholesky of a symmetric PSD matrix: returns `F` (n x r) with
/// `A ≈ F Fᵀ`, where r is the numerical rank. Diagonal pivots below
/// `-tol` are reported as a PSD violation.
pub fn psd_factor<T: Scalar>(a: &Matrix<T>, tol: T) -> Result<Matrix<T>, LinalgError> {
    let n = a.rows();
    a.is_symmetric(tol.max(T::epsilon() * a.max_abs() * T::lit(16.0)))?;
    let mut s = a.clone();
    let mut perm: Vec<usize> = (0..n).collect();
    let mut cols: Vec<Vec<T>> = Vec::new();
    for k in 0..n {
        let (p, dmax) = (k..n)
            .map(|i| (i, s[(i, i)]))
            .fold((k, T::neg_infinity()), |b, c| if c.1 > b.1 { c } else { b });
        if dmax <= tol {
            if let Some((idx, v)) = (k..n).map(|i| (i, s[(i, i)])).find(|(_, v)| *v < -tol) {
                return Err(LinalgError::NotPsd { index: perm[idx], value: v.to_f64_lossy() });
            }
            break;
        }
        if p != k {
            s.swap_rows(k, p);
            for i in 0..n {
                let (x, y) = (s[(i, k)], s[(i, p)]);
                s[(i, k)] = y;
                s[(i, p)] = x;
            }
            perm.swap(k, p);
            for c in cols.iter_mut() {
                c.swap(k, p);
            }
        }
        let d = dmax.sqrt();
        let mut col = vec![T::zero(); n];
        col[k] = d;
        for i in k + 1..n {
            col[i] = s[(i, k)] / d;
        }
        for i in k + 1..n {
            for j in k + 1..=i {
                let v = s[(i, j)] - col[i] * col[j];
                s[(i, j)] = v;
                s[(j, i)] = v;
            }
        }
        cols.push(col);
    }
    let r = cols.len();
    let mut f = Matrix::zeros(n, r);
    for (j, col) in cols.iter().enumerate() {
        for (i, &v) in col.iter().enumerate() {
            f[(perm[i], j)] = v;
        }
    }
    Ok(f)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Matrix<f64> {
        Matrix::from_rows(&[
            vec![4.0, -2.0, 1.0, 0.5],
            vec![-2.0, -3.0, 0.2, 1.0],
            vec![1.0, 0.2, 0.0, 2.0],
            vec![0.5, 1.0, 2.0, -1.0],
        ])
    }

    #[test]
    fn lu_solves_and_inverts() {
        let a = sample();
        let lu = Lu::factor(a.clone()).unwrap();
        let b = vec![1.0, 2.0, 3.0, 4.0];
        let x = lu.solve(&b);
        let r = a.mul_vec(&x);
        for (ri, bi) in r.iter().zip(&b) {
            assert!((ri - bi).abs() < 1e-12);
        }
        let xt = lu.solve_transpose(&b);
        let rt = a.transpose().mul_vec(&xt);
        for (ri, bi) in rt.iter().zip(&b) {
            assert!((ri - bi).abs() < 1e-12);
        }
        let prod = a.matmul(&lu.inverse());
        for i in 0..4 {
            for j in 0..4 {
                let e = if i == j { 1.0 } else { 0.0 };
                assert!((prod[(i, j)] - e).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn lu_condition_estimate_matches_exact_on_small_matrix() {
        let a = sample();
        let lu = Lu::factor(a.clone()).unwrap();
        let exact = a.norm1() * lu.inverse().norm1();
        let est = lu.condition_estimate();
        assert!(est <= exact * (1.0 + 1e-12) && est >= exact / 4.0, "{est} vs {exact}");
    }

    #[test]
    fn lu_rejects_singular() {
        let a = Matrix::from_rows(&[vec![1.0, 2.0], vec![2.0, 4.0]]);
        assert!(matches!(Lu::factor(a), Err(LinalgError::Singular { .. })));
    }

    #[test]
    fn ldlt_inertia_and_solve() {
        let a = sample();
        let f = Ldlt::factor(&a).unwrap();
        let inertia = f.inertia();
        assert_eq!(inertia.positive + inertia.negative + inertia.zero, 4);
        assert_eq!(inertia.zero, 0);
        let b = vec![0.3, -1.0, 2.0, 0.7];
        let x = f.solve(&b).unwrap();
        for (ri, bi) in a.mul_vec(&x).iter().zip(&b) {
            assert!((ri - bi).abs() < 1e-12);
        }
    }

    #[test]
    fn ldlt_kkt_inertia() {
        // [[H, Jᵀ], [J, 0]] with H positive definite: inertia (n, m, 0)
        let k = Matrix::from_rows(&[
            vec![2.0, 0.0, 0.0, 1.0],
            vec![0.0, 3.0, 0.0, 1.0],
            vec![0.0, 0.0, 1.0, -1.0],
            vec![1.0, 1.0, -1.0, 0.0],
        ]);
        let f = Ldlt::factor(&k).unwrap();
        assert_eq!(f.inertia(), Inertia { positive: 3, negative: 1, zero: 0 });
    }

    #[test]
    fn ldlt_detects_zero_eigenvalue() {
        let a = Matrix::from_rows(&[vec![1.0, 1.0], vec![1.0, 1.0]]);
        let f = Ldlt::factor(&a).unwrap();
        assert_eq!(f.inertia().zero, 1);
        assert!(f.solve(&[1.0, 0.0]).is_err());
    }

    #[test]
    fn psd_factor_handles_zero_rows() {
        let a = Matrix::from_rows(&[
            vec![0.04_f64, 0.0, 0.01],
            vec![0.0, 0.0, 0.0],
            vec![0.01, 0.0, 0.09],
        ]);
        let f = psd_factor(&a, 1e-14).unwrap();
        assert_eq!(f.cols(), 2);
        let back = f.matmul(&f.transpose());
        for i in 0..3 {
            for j in 0..3 {
                assert!((back[(i, j)] - a[(i, j)]).abs() < 1e-15);
            }
            assert_eq!(f[(1, 0)], 0.0);
        }
    }

    #[test]
    fn psd_factor_rejects_indefinite() {
        let a = Matrix::from_rows(&[vec![1.0, 2.0], vec![2.0, 1.0]]);
        assert!(matches!(psd_factor(&a, 1e-12), Err(LinalgError::NotPsd { .. })));
    }
}
