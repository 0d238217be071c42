//! Small dense complex linear algebra.
//!
//! Matrices in this crate are at most a few dozen rows, so everything is
//! row-major `Vec` storage with straightforward O(n^3) kernels: LU with partial
//! pivoting (solves, inverses, log-determinants), Hessenberg + shifted QR for
//! eigenvalues and one-sided Jacobi for singular values.

use std::ops::{Add, Index, IndexMut, Mul, Sub};

use num_complex::Complex;
use num_traits::{One, Zero};

use crate::scalar::{cr, wrap_angle, Real, C};

#[derive(Clone, Debug, PartialEq)]
pub struct CMatrix<T> {
    rows: usize,
    cols: usize,
    data: Vec<C<T>>,
}

impl<T: Real> CMatrix<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![C::zero(); rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = C::one();
        }
        m
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> C<T>) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    pub fn from_rows(rows: &[Vec<C<T>>]) -> Self {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        assert!(rows.iter().all(|row| row.len() == c), "ragged rows");
        Self { rows: r, cols: c, data: rows.iter().flatten().copied().collect() }
    }

    pub fn from_real_rows(rows: &[Vec<T>]) -> Self {
        let converted: Vec<Vec<C<T>>> =
            rows.iter().map(|r| r.iter().map(|&x| cr(x)).collect()).collect();
        Self::from_rows(&converted)
    }

    pub fn diag(entries: &[C<T>]) -> Self {
        let mut m = Self::zeros(entries.len(), entries.len());
        for (i, &d) in entries.iter().enumerate() {
            m[(i, i)] = d;
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
    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn as_slice(&self) -> &[C<T>] {
        &self.data
    }

    pub fn adjoint(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |i, j| self[(j, i)].conj())
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |i, j| self[(j, i)])
    }

    pub fn scale(&self, s: C<T>) -> Self {
        Self { rows: self.rows, cols: self.cols, data: self.data.iter().map(|&x| x * s).collect() }
    }

    /// Sub-matrix with the given row and column index lists.
    pub fn select(&self, rows: &[usize], cols: &[usize]) -> Self {
        Self::from_fn(rows.len(), cols.len(), |i, j| self[(rows[i], cols[j])])
    }

    /// Horizontal concatenation `(self, other)`.
    pub fn hcat(&self, other: &Self) -> Self {
        assert_eq!(self.rows, other.rows);
        Self::from_fn(self.rows, self.cols + other.cols, |i, j| {
            if j < self.cols {
                self[(i, j)]
            } else {
                other[(i, j - self.cols)]
            }
        })
    }

    pub fn trace(&self) -> C<T> {
        (0..self.rows.min(self.cols)).map(|i| self[(i, i)]).fold(C::zero(), |a, b| a + b)
    }

    /// Largest entry modulus.
    pub fn max_abs(&self) -> T {
        self.data.iter().map(|z| z.norm()).fold(T::zero(), T::max)
    }

    /// Maximum absolute column sum.
    pub fn norm_1(&self) -> T {
        (0..self.cols)
            .map(|j| (0..self.rows).map(|i| self[(i, j)].norm()).sum::<T>())
            .fold(T::zero(), T::max)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|z| z.re.is_finite() && z.im.is_finite())
    }

    /// `I - self` for square matrices.
    pub fn one_minus(&self) -> Self {
        assert!(self.is_square());
        Self::identity(self.rows) - self
    }

    /// Residual `max |self^dagger self - I|`.
    pub fn unitarity_defect(&self) -> T {
        (&(&self.adjoint() * self) - &Self::identity(self.cols)).max_abs()
    }

    /// `self^n` for square matrices (binary powering).
    pub fn pow(&self, mut n: u32) -> Self {
        assert!(self.is_square());
        let mut base = self.clone();
        let mut acc = Self::identity(self.rows);
        while n > 0 {
            if n & 1 == 1 {
                acc = &acc * &base;
            }
            n >>= 1;
            if n > 0 {
                base = &base * &base;
            }
        }
        acc
    }

    pub fn lu(&self) -> Lu<T> {
        Lu::new(self)
    }

    pub fn log_det(&self) -> LogDet<T> {
        if self.rows == 0 {
            return LogDet::one();
        }
        self.lu().log_det()
    }

    pub fn det(&self) -> C<T> {
        self.log_det().value()
    }

    /// Inverse via LU; `None` when a pivot vanishes exactly.
    pub fn inverse(&self) -> Option<Self> {
        let lu = self.lu();
        if lu.is_singular() {
            return None;
        }
        Some(lu.solve(&Self::identity(self.rows)))
    }

    /// 1-norm condition number estimate `||M||_1 ||M^-1||_1` (infinite when singular).
    pub fn condition_1(&self) -> T {
        match self.inverse() {
            Some(inv) if inv.is_finite() => self.norm_1() * inv.norm_1(),
            _ => T::infinity(),
        }
    }
}

impl<T> Index<(usize, usize)> for CMatrix<T> {
    type Output = Complex<T>;
    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &Complex<T> {
        &self.data[i * self.cols + j]
    }
}

impl<T> IndexMut<(usize, usize)> for CMatrix<T> {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut Complex<T> {
        &mut self.data[i * self.cols + j]
    }
}

impl<T: Real> Mul for &CMatrix<T> {
    type Output = CMatrix<T>;
    fn mul(self, rhs: &CMatrix<T>) -> CMatrix<T> {
        assert_eq!(self.cols, rhs.rows, "dimension mismatch in product");
        let mut out = CMatrix::zeros(self.rows, rhs.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(i, k)];
                if a.is_zero() {
                    continue;
                }
                for j in 0..rhs.cols {
                    out.data[i * rhs.cols + j] = out.data[i * rhs.cols + j] + a * rhs[(k, j)];
                }
            }
        }
        out
    }
}

impl<T: Real> Add for &CMatrix<T> {
    type Output = CMatrix<T>;
    fn add(self, rhs: &CMatrix<T>) -> CMatrix<T> {
        assert_eq!((self.rows, self.cols), (rhs.rows, rhs.cols));
        CMatrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&rhs.data).map(|(&a, &b)| a + b).collect(),
        }
    }
}

impl<T: Real> Sub for &CMatrix<T> {
    type Output = CMatrix<T>;
    fn sub(self, rhs: &CMatrix<T>) -> CMatrix<T> {
        assert_eq!((self.rows, self.cols), (rhs.rows, rhs.cols));
        CMatrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&rhs.data).map(|(&a, &b)| a - b).collect(),
        }
    }
}

impl<T: Real> Sub<&CMatrix<T>> for CMatrix<T> {
    type Output = CMatrix<T>;
    fn sub(self, rhs: &CMatrix<T>) -> CMatrix<T> {
        &self - rhs
    }
}

/// Determinant in overflow-safe form `exp(ln_abs + i arg)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LogDet<T> {
    pub ln_abs: T,
    /// Phase in `(-pi, pi]`.
    pub arg: T,
}

impl<T: Real> LogDet<T> {
    pub fn one() -> Self {
        Self { ln_abs: T::zero(), arg: T::zero() }
    }

    pub fn zero() -> Self {
        Self { ln_abs: T::neg_infinity(), arg: T::zero() }
    }

    pub fn from_value(z: C<T>) -> Self {
        Self { ln_abs: z.norm().ln(), arg: z.arg() }
    }

    pub fn is_zero(&self) -> bool {
        self.ln_abs == T::neg_infinity()
    }

    pub fn value(&self) -> C<T> {
        if self.is_zero() {
            return C::zero();
        }
        Complex::from_polar(self.ln_abs.exp(), self.arg)
    }

    pub fn abs(&self) -> T {
        self.ln_abs.exp()
    }

    pub fn mul(self, other: Self) -> Self {
        Self { ln_abs: self.ln_abs + other.ln_abs, arg: wrap_angle(self.arg + other.arg) }
    }

    pub fn div(self, other: Self) -> Self {
        Self { ln_abs: self.ln_abs - other.ln_abs, arg: wrap_angle(self.arg - other.arg) }
    }

    /// `|self / other - 1|`, robust to huge or tiny magnitudes.
    pub fn relative_distance(self, other: Self) -> T {
        if self.is_zero() && other.is_zero() {
            return T::zero();
        }
        let q = self.div(other);
        (q.value() - C::one()).norm()
    }
}

/// LU factorisation with partial pivoting, `P A = L U`.
#[derive(Clone, Debug)]
pub struct Lu<T> {
    n: usize,
    lu: Vec<C<T>>,
    perm: Vec<usize>,
    swaps: usize,
    singular: bool,
}

impl<T: Real> Lu<T> {
    fn new(a: &CMatrix<T>) -> Self {
        assert!(a.is_square(), "LU needs a square matrix");
        let n = a.rows;
        let mut lu = a.data.clone();
        let mut perm: Vec<usize> = (0..n).collect();
        let mut swaps = 0;
        let mut singular = false;
        for k in 0..n {
            let (mut p, mut best) = (k, T::zero());
            for i in k..n {
                let v = lu[i * n + k].norm();
                if v > best {
                    best = v;
                    p = i;
                }
            }
            if best == T::zero() {
                singular = true;
                continue;
            }
            if p != k {
                for j in 0..n {
                    lu.swap(k * n + j, p * n + j);
                }
                perm.swap(k, p);
                swaps += 1;
            }
            let pivot = lu[k * n + k];
            for i in (k + 1)..n {
                let f = lu[i * n + k] / pivot;
                lu[i * n + k] = f;
                if f.is_zero() {
                    continue;
                }
                for j in (k + 1)..n {
                    lu[i * n + j] = lu[i * n + j] - f * lu[k * n + j];
                }
            }
        }
        Self { n, lu, perm, swaps, singular }
    }

    pub fn is_singular(&self) -> bool {
        self.singular
    }

    pub fn log_det(&self) -> LogDet<T> {
        if self.singular {
            return LogDet::zero();
        }
        let mut ln_abs = T::zero();
        let mut arg = if self.swaps % 2 == 1 { T::PI() } else { T::zero() };
        for k in 0..self.n {
            let d = self.lu[k * self.n + k];
            ln_abs = ln_abs + d.norm().ln();
            arg = wrap_angle(arg + d.arg());
        }
        LogDet { ln_abs, arg }
    }

    /// Solves `A X = B` column by column.
    pub fn solve(&self, b: &CMatrix<T>) -> CMatrix<T> {
        assert_eq!(b.rows, self.n);
        let n = self.n;
        let mut x = CMatrix::zeros(n, b.cols);
        for col in 0..b.cols {
            let mut y: Vec<C<T>> = (0..n).map(|i| b[(self.perm[i], col)]).collect();
            for i in 0..n {
                let mut s = y[i];
                for j in 0..i {
                    s = s - self.lu[i * n + j] * y[j];
                }
                y[i] = s;
            }
            for i in (0..n).rev() {
                let mut s = y[i];
                for j in (i + 1)..n {
                    s = s - self.lu[i * n + j] * y[j];
                }
                y[i] = s / self.lu[i * n + i];
            }
            for i in 0..n {
                x[(i, col)] = y[i];
            }
        }
        x
    }
}

fn givens<T: Real>(x: C<T>, y: C<T>) -> (T, C<T>) {
    let ax = x.norm();
    let ay = y.norm();
    if ay == T::zero() {
        return (T::one(), C::zero());
    }
    if ax == T::zero() {
        return (T::zero(), C::one());
    }
    let norm = ax.hypot(ay);
    let alpha = x / ax;
    (ax / norm, alpha * y.conj() / norm)
}

/// Eigenvalues of a square complex matrix (unordered).
pub fn eigenvalues<T: Real>(m: &CMatrix<T>) -> Vec<C<T>> {
    assert!(m.is_square(), "eigenvalues of a non-square matrix");
    let n = m.rows;
    match n {
        0 => return Vec::new(),
        1 => return vec![m[(0, 0)]],
        _ => {}
    }
    let mut h = hessenberg(m);
    let eps = T::epsilon();
    let mut out = vec![C::zero(); n];
    let mut hi = n - 1;
    let mut iter = 0usize;
    let max_iter = 100 * n;
    loop {
        // Deflate converged trailing eigenvalues.
        let mut l = hi;
        while l > 0 {
            let sub = h[(l, l - 1)].norm();
            let scale = h[(l, l)].norm() + h[(l - 1, l - 1)].norm();
            let scale = if scale == T::zero() { h.max_abs() } else { scale };
            if sub <= eps * scale {
                h[(l, l - 1)] = C::zero();
                break;
            }
            l -= 1;
        }
        if l == hi {
            out[hi] = h[(hi, hi)];
            if hi == 0 {
                break;
            }
            hi -= 1;
            iter = 0;
            continue;
        }
        iter += 1;
        if iter > max_iter {
            // Give up on further convergence; report the diagonal of the active block.
            for k in l..=hi {
                out[k] = h[(k, k)];
            }
            if l == 0 {
                break;
            }
            hi = l - 1;
            iter = 0;
            continue;
        }
        let shift = if iter % 11 == 10 {
            // Exceptional shift.
            h[(hi, hi)] + cr(h[(hi, hi - 1)].norm() * T::lit(0.75))
        } else {
            wilkinson_shift(h[(hi - 1, hi - 1)], h[(hi - 1, hi)], h[(hi, hi - 1)], h[(hi, hi)])
        };
        qr_step(&mut h, l, hi, shift);
    }
    out
}

fn wilkinson_shift<T: Real>(a: C<T>, b: C<T>, c: C<T>, d: C<T>) -> C<T> {
    let two = T::lit(2.0);
    let tr_half = (a + d) / two;
    let det = a * d - b * c;
    let disc = (tr_half * tr_half - det).sqrt();
    let l1 = tr_half + disc;
    let l2 = tr_half - disc;
    if (l1 - d).norm() < (l2 - d).norm() {
        l1
    } else {
        l2
    }
}

fn qr_step<T: Real>(h: &mut CMatrix<T>, l: usize, hi: usize, shift: C<T>) {
    for k in l..=hi {
        h[(k, k)] = h[(k, k)] - shift;
    }
    let mut rots = Vec::with_capacity(hi - l);
    for k in l..hi {
        let (cs, sn) = givens(h[(k, k)], h[(k + 1, k)]);
        for j in k..=hi {
            let a = h[(k, j)];
            let b = h[(k + 1, j)];
            h[(k, j)] = a * cs + sn * b;
            h[(k + 1, j)] = -sn.conj() * a + b * cs;
        }
        rots.push((cs, sn));
    }
    for (idx, &(cs, sn)) in rots.iter().enumerate() {
        let k = l + idx;
        let last = (k + 2).min(hi);
        for i in l..=last {
            let a = h[(i, k)];
            let b = h[(i, k + 1)];
            h[(i, k)] = a * cs + b * sn.conj();
            h[(i, k + 1)] = -a * sn + b * cs;
        }
    }
    for k in l..=hi {
        h[(k, k)] = h[(k, k)] + shift;
    }
}

fn hessenberg<T: Real>(m: &CMatrix<T>) -> CMatrix<T> {
    let n = m.rows;
    let mut h = m.clone();
    for k in 0..n.saturating_sub(2) {
        let alpha_norm = ((k + 1)..n).map(|i| h[(i, k)].norm_sqr()).sum::<T>().sqrt();
        if alpha_norm == T::zero() {
            continue;
        }
        let x0 = h[(k + 1, k)];
        let phase = if x0.norm() == T::zero() { C::one() } else { x0 / x0.norm() };
        // v = x + phase * |x| e1, H = I - 2 v v^dagger / (v^dagger v)
        let mut v: Vec<C<T>> = ((k + 1)..n).map(|i| h[(i, k)]).collect();
        v[0] = v[0] + phase * cr(alpha_norm);
        let vnorm2 = v.iter().map(|z| z.norm_sqr()).sum::<T>();
        if vnorm2 == T::zero() {
            continue;
        }
        let two = T::lit(2.0);
        // Left: rows k+1..n, all columns.
        for j in 0..n {
            let mut s = C::<T>::zero();
            for (idx, vi) in v.iter().enumerate() {
                s = s + vi.conj() * h[(k + 1 + idx, j)];
            }
            let f = s * cr(two / vnorm2);
            for (idx, vi) in v.iter().enumerate() {
                h[(k + 1 + idx, j)] = h[(k + 1 + idx, j)] - *vi * f;
            }
        }
        // Right: all rows, columns k+1..n.
        for i in 0..n {
            let mut s = C::<T>::zero();
            for (idx, vi) in v.iter().enumerate() {
                s = s + h[(i, k + 1 + idx)] * *vi;
            }
            let f = s * cr(two / vnorm2);
            for (idx, vi) in v.iter().enumerate() {
                h[(i, k + 1 + idx)] = h[(i, k + 1 + idx)] - f * vi.conj();
            }
        }
        for i in (k + 2)..n {
            h[(i, k)] = C::zero();
        }
    }
    h
}

/// Singular values in descending order (`min(rows, cols)` of them), by one-sided Jacobi.
pub fn singular_values<T: Real>(m: &CMatrix<T>) -> Vec<T> {
    let work = if m.cols > m.rows { m.adjoint() } else { m.clone() };
    let (rows, cols) = (work.rows, work.cols);
    let mut colv: Vec<Vec<C<T>>> =
        (0..cols).map(|j| (0..rows).map(|i| work[(i, j)]).collect()).collect();
    let eps = T::epsilon();
    for _sweep in 0..80 {
        let mut rotated = false;
        for p in 0..cols {
            for q in (p + 1)..cols {
                let alpha: T = colv[p].iter().map(|z| z.norm_sqr()).sum();
                let beta: T = colv[q].iter().map(|z| z.norm_sqr()).sum();
                let gamma: C<T> =
                    colv[p].iter().zip(&colv[q]).fold(C::zero(), |s, (a, b)| s + a.conj() * b);
                let g = gamma.norm();
                if g == T::zero() || g <= eps * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let phase = (gamma / g).conj();
                for z in colv[q].iter_mut() {
                    *z = *z * phase;
                }
                let zeta = (beta - alpha) / (T::lit(2.0) * g);
                let t = zeta.signum() / (zeta.abs() + (T::one() + zeta * zeta).sqrt());
                let cs = T::one() / (T::one() + t * t).sqrt();
                let sn = cs * t;
                for i in 0..rows {
                    let a = colv[p][i];
                    let b = colv[q][i];
                    colv[p][i] = a * cs - b * sn;
                    colv[q][i] = a * sn + b * cs;
                }
            }
        }
        if !rotated {
            break;
        }
    }
    let mut sv: Vec<T> =
        colv.iter().map(|col| col.iter().map(|z| z.norm_sqr()).sum::<T>().sqrt()).collect();
    sv.sort_by(|a, b| b.partial_cmp(a).unwrap_or(std::cmp::Ordering::Equal));
    sv.truncate(rows.min(cols));
    sv
}

pub fn min_singular_value<T: Real>(m: &CMatrix<T>) -> T {
    singular_values(m).last().copied().unwrap_or(T::infinity())
}

/// `sum_j Arg(1 - lambda_j)` over the eigenvalues of `m`.
///
/// This is the branch of `Im log det(I - M)` obtained from `-sum_n tr M^n / n`
/// whenever the spectral radius is below one.
pub fn arg_det_one_minus_series<T: Real>(m: &CMatrix<T>) -> T {
    eigenvalues(m).into_iter().map(|l| (C::<T>::one() - l).arg()).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scalar::c;

    fn sample() -> CMatrix<f64> {
        CMatrix::from_rows(&[
            vec![c(2.0, 1.0), c(0.5, -0.3), c(0.0, 1.0)],
            vec![c(-1.0, 0.2), c(3.0, 0.0), c(1.0, 1.0)],
            vec![c(0.3, 0.0), c(-0.7, 2.0), c(1.0, -1.0)],
        ])
    }

    #[test]
    fn solve_and_inverse_agree() {
        let a = sample();
        let inv = a.inverse().unwrap();
        assert!((&(&a * &inv) - &CMatrix::identity(3)).max_abs() < 1e-13);
    }

    #[test]
    fn determinant_matches_cofactor_expansion() {
        let a = sample();
        let m = |i: usize, j: usize| a[(i, j)];
        let cof = m(0, 0) * (m(1, 1) * m(2, 2) - m(1, 2) * m(2, 1))
            - m(0, 1) * (m(1, 0) * m(2, 2) - m(1, 2) * m(2, 0))
            + m(0, 2) * (m(1, 0) * m(2, 1) - m(1, 1) * m(2, 0));
        assert!((a.det() - cof).norm() < 1e-12);
    }

    #[test]
    fn singular_matrix_has_zero_log_det() {
        let a = CMatrix::<f64>::from_real_rows(&[vec![1.0, 2.0], vec![2.0, 4.0]]);
        assert!(a.log_det().is_zero() || a.det().norm() < 1e-14);
    }

    #[test]
    fn eigenvalues_of_triangular_matrix_are_its_diagonal() {
        let mut a = CMatrix::<f64>::zeros(4, 4);
        let d = [c(1.0, 0.0), c(-2.0, 1.0), c(0.5, 0.5), c(3.0, -1.0)];
        for i in 0..4 {
            a[(i, i)] = d[i];
            for j in (i + 1)..4 {
                a[(i, j)] = c(0.3 * (i + j) as f64, 0.1);
            }
        }
        let mut ev = eigenvalues(&a);
        for target in d {
            let (pos, best) = ev
                .iter()
                .enumerate()
                .map(|(k, z)| (k, (z - target).norm()))
                .min_by(|x, y| x.1.partial_cmp(&y.1).unwrap())
                .unwrap();
            assert!(best < 1e-12, "missing {target}");
            ev.remove(pos);
        }
    }

    #[test]
    fn eigenvalues_of_companion_matrix_are_polynomial_roots() {
        // (z - 1)(z - i)(z + 2)(z - 0.5 - 0.5i)
        let roots = [c(1.0, 0.0), c(0.0, 1.0), c(-2.0, 0.0), c(0.5, 0.5)];
        let mut coeffs = vec![c(1.0, 0.0)];
        for r in roots {
            let mut next = vec![C::zero(); coeffs.len() + 1];
            for (k, &a) in coeffs.iter().enumerate() {
                next[k] += a;
                next[k + 1] -= a * r;
            }
            coeffs = next;
        }
        let n = roots.len();
        let comp = CMatrix::from_fn(n, n, |i, j| {
            if i == 0 {
                -coeffs[j + 1]
            } else if i == j + 1 {
                C::one()
            } else {
                C::zero()
            }
        });
        let ev = eigenvalues(&comp);
        for r in roots {
            assert!(ev.iter().any(|z| (z - r).norm() < 1e-10), "root {r} not found in {ev:?}");
        }
    }

    #[test]
    fn eigenvalue_sum_and_product_match_trace_and_det() {
        let a = sample();
        let ev = eigenvalues(&a);
        let s = ev.iter().fold(C::<f64>::zero(), |acc, z| acc + z);
        let p = ev.iter().fold(C::<f64>::one(), |acc, z| acc * z);
        assert!((s - a.trace()).norm() < 1e-12);
        assert!((p - a.det()).norm() < 1e-11);
    }

    #[test]
    fn singular_values_of_known_matrix() {
        // diag(3, 1) rotated by unitaries keeps singular values {3, 1}.
        let u = CMatrix::<f64>::from_rows(&[
            vec![c(0.6, 0.0), c(0.0, 0.8)],
            vec![c(0.0, 0.8), c(0.6, 0.0)],
        ]);
        let d = CMatrix::diag(&[c(3.0, 0.0), c(1.0, 0.0)]);
        let m = &(&u * &d) * &u.adjoint();
        let sv = singular_values(&m);
        assert!((sv[0] - 3.0).abs() < 1e-13 && (sv[1] - 1.0).abs() < 1e-13);
    }

    #[test]
    fn singular_values_of_wide_matrix() {
        let m = CMatrix::<f64>::from_real_rows(&[vec![1.0, 0.0, 0.0, 0.0], vec![0.0, 0.0, 2.0, 0.0]]);
        let sv = singular_values(&m);
        assert_eq!(sv.len(), 2);
        assert!((sv[0] - 2.0).abs() < 1e-15 && (sv[1] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn tiny_singular_value_resolved() {
        let m = CMatrix::<f64>::from_real_rows(&[vec![1.0, 1.0], vec![1.0, 1.0 + 1e-11]]);
        let s = min_singular_value(&m);
        assert!((s - 0.5e-11).abs() < 1e-15, "{s}");
    }

    #[test]
    fn log_det_handles_extreme_scales() {
        let d = CMatrix::diag(&[c(1e200, 0.0), c(1e200, 0.0), c(0.0, 1e-300)]);
        let ld = d.log_det();
        assert!((ld.ln_abs - (100.0 * 10f64.ln())).abs() < 1e-9);
        assert!((ld.arg - std::f64::consts::FRAC_PI_2).abs() < 1e-15);
    }

    #[test]
    fn matrix_power() {
        let a = sample();
        let p = a.pow(5);
        let direct = &(&(&(&a * &a) * &a) * &a) * &a;
        assert!((&p - &direct).max_abs() < 1e-9 * direct.max_abs());
    }
}
