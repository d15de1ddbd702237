//! Small dense real linear algebra.
//!
//! Problem sizes throughout the crate stay below roughly fifty unknowns, so
//! everything here is row-major, allocation-happy and cubic.

use std::fmt;
use std::ops::{Deref, DerefMut, Index, IndexMut};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Dense vector of finite reals.
#[derive(Clone, PartialEq, Default)]
pub struct Vector<T>(Vec<T>);

impl<T: Scalar> Vector<T> {
    /// Wraps `data` without checking finiteness. Use [`Vector::try_from_vec`]
    /// for external input.
    pub fn from_vec(data: Vec<T>) -> Self {
        Vector(data)
    }

    pub fn try_from_vec(data: Vec<T>) -> Result<Self> {
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("vector".into()));
        }
        Ok(Vector(data))
    }

    pub fn zeros(n: usize) -> Self {
        Vector(vec![T::zero(); n])
    }

    pub fn from_f64(data: &[f64]) -> Self {
        Vector(data.iter().map(|&v| T::lit(v)).collect())
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn into_vec(self) -> Vec<T> {
        self.0
    }

    pub fn as_slice(&self) -> &[T] {
        &self.0
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    pub fn norm_inf(&self) -> T {
        norm_inf(&self.0)
    }

    pub fn norm2(&self) -> T {
        self.dot(self).sqrt()
    }

    pub fn dot(&self, other: &[T]) -> T {
        dot(&self.0, other)
    }

    pub fn scaled(&self, k: T) -> Self {
        Vector(self.0.iter().map(|&v| v * k).collect())
    }

    /// `self + k * other`
    pub fn axpy(&self, k: T, other: &[T]) -> Self {
        debug_assert_eq!(self.len(), other.len());
        Vector(self.0.iter().zip(other).map(|(&a, &b)| a + k * b).collect())
    }

    pub fn add(&self, other: &[T]) -> Self {
        self.axpy(T::one(), other)
    }

    pub fn sub(&self, other: &[T]) -> Self {
        self.axpy(-T::one(), other)
    }

    /// Concatenation of several blocks.
    pub fn concat(parts: &[&[T]]) -> Self {
        Vector(parts.iter().flat_map(|p| p.iter().copied()).collect())
    }
}

impl<T> Deref for Vector<T> {
    type Target = [T];
    fn deref(&self) -> &[T] {
        &self.0
    }
}

impl<T> DerefMut for Vector<T> {
    fn deref_mut(&mut self) -> &mut [T] {
        &mut self.0
    }
}

impl<T> From<Vec<T>> for Vector<T> {
    fn from(v: Vec<T>) -> Self {
        Vector(v)
    }
}

impl<T> FromIterator<T> for Vector<T> {
    fn from_iter<I: IntoIterator<Item = T>>(iter: I) -> Self {
        Vector(iter.into_iter().collect())
    }
}

impl<T: fmt::Debug> fmt::Debug for Vector<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

pub(crate) fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(&x, &y)| x * y).sum()
}

/// Max-abs norm; NaN if any entry is NaN.
pub(crate) fn norm_inf<T: Scalar>(a: &[T]) -> T {
    a.iter().fold(T::zero(), |m, v| {
        if v.is_nan() || m.is_nan() {
            T::nan()
        } else {
            m.max(v.abs())
        }
    })
}

/// Dense row-major matrix of finite reals.
#[derive(Clone, PartialEq)]
pub struct Matrix<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Scalar> Matrix<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![T::zero(); rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = T::one();
        }
        m
    }

    pub fn from_diag(d: &[T]) -> Self {
        let mut m = Self::zeros(d.len(), d.len());
        for (i, &v) in d.iter().enumerate() {
            m[(i, i)] = v;
        }
        m
    }

    /// Builds a matrix from row-major storage, rejecting size mismatches and
    /// non-finite entries.
    pub fn from_row_major(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        if rows * cols != data.len() {
            return Err(Error::DimensionMismatch(format!(
                "{rows}x{cols} matrix needs {} entries, got {}",
                rows * cols,
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("matrix".into()));
        }
        Ok(Matrix { rows, cols, data })
    }

    /// Builds a matrix from nested rows. All rows must have equal length.
    pub fn from_rows<R: AsRef<[T]>>(rows: &[R]) -> Result<Self> {
        let nrows = rows.len();
        let ncols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(nrows * ncols);
        for (i, r) in rows.iter().enumerate() {
            let r = r.as_ref();
            if r.len() != ncols {
                return Err(Error::DimensionMismatch(format!(
                    "row {i} has {} entries, expected {ncols}",
                    r.len()
                )));
            }
            data.extend_from_slice(r);
        }
        Self::from_row_major(nrows, ncols, data)
    }

    /// Convenience for tests and literals.
    pub fn from_f64_rows(rows: &[&[f64]]) -> Self {
        let converted: Vec<Vec<T>> = rows.iter().map(|r| r.iter().map(|&v| T::lit(v)).collect()).collect();
        Self::from_rows(&converted).expect("well-formed literal matrix")
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn to_rows(&self) -> Vec<Vec<T>> {
        (0..self.rows).map(|i| self.row(i).to_vec()).collect()
    }

    pub fn column(&self, j: usize) -> Vector<T> {
        (0..self.rows).map(|i| self[(i, j)]).collect()
    }

    pub fn diagonal(&self) -> Vector<T> {
        (0..self.rows.min(self.cols)).map(|i| self[(i, i)]).collect()
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

    pub fn matmul(&self, other: &Matrix<T>) -> Result<Self> {
        if self.cols != other.rows {
            return Err(Error::DimensionMismatch(format!(
                "cannot multiply {}x{} by {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut out = Self::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(i, k)];
                if a == T::zero() {
                    continue;
                }
                for j in 0..other.cols {
                    out.data[i * other.cols + j] += a * other[(k, j)];
                }
            }
        }
        Ok(out)
    }

    pub fn matvec(&self, x: &[T]) -> Result<Vector<T>> {
        if self.cols != x.len() {
            return Err(Error::DimensionMismatch(format!(
                "cannot apply {}x{} matrix to vector of length {}",
                self.rows,
                self.cols,
                x.len()
            )));
        }
        Ok((0..self.rows).map(|i| dot(self.row(i), x)).collect())
    }

    fn zip_with(&self, other: &Matrix<T>, op: impl Fn(T, T) -> T) -> Result<Self> {
        if self.rows != other.rows || self.cols != other.cols {
            return Err(Error::DimensionMismatch(format!(
                "{}x{} vs {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        Ok(Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| op(a, b)).collect(),
        })
    }

    pub fn add(&self, other: &Matrix<T>) -> Result<Self> {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Matrix<T>) -> Result<Self> {
        self.zip_with(other, |a, b| a - b)
    }

    pub fn scaled(&self, k: T) -> Self {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| v * k).collect(),
        }
    }

    pub fn max_abs(&self) -> T {
        norm_inf(&self.data)
    }

    /// Maximum absolute row sum.
    pub fn norm_inf(&self) -> T {
        (0..self.rows)
            .map(|i| self.row(i).iter().map(|v| v.abs()).sum::<T>())
            .fold(T::zero(), T::max)
    }

    /// Maximum absolute column sum.
    pub fn norm_1(&self) -> T {
        (0..self.cols)
            .map(|j| (0..self.rows).map(|i| self[(i, j)].abs()).sum::<T>())
            .fold(T::zero(), T::max)
    }

    /// `(A + Aᵀ) / 2`
    pub fn symmetric_part(&self) -> Self {
        let t = self.transpose();
        let half = T::lit(0.5);
        self.zip_with(&t, |a, b| half * (a + b)).expect("square matrix")
    }

    /// Submatrix picking the given row and column indices.
    pub fn select(&self, rows: &[usize], cols: &[usize]) -> Self {
        let mut out = Self::zeros(rows.len(), cols.len());
        for (oi, &i) in rows.iter().enumerate() {
            for (oj, &j) in cols.iter().enumerate() {
                out[(oi, oj)] = self[(i, j)];
            }
        }
        out
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

impl<T: fmt::Debug> fmt::Debug for Matrix<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "Matrix {}x{} [", self.rows, self.cols)?;
        for i in 0..self.rows {
            writeln!(f, "  {:?}", &self.data[i * self.cols..(i + 1) * self.cols])?;
        }
        write!(f, "]")
    }
}

/// Relative pivot threshold below which a matrix is declared singular.
pub const PIVOT_THRESHOLD: f64 = 1e-14;

/// LU factorization with partial pivoting, `P A = L U`.
#[derive(Clone, Debug)]
pub struct LuFactor<T> {
    lu: Matrix<T>,
    perm: Vec<usize>,
}

impl<T: Scalar> LuFactor<T> {
    pub fn new(a: &Matrix<T>) -> Result<Self> {
        if !a.is_square() {
            return Err(Error::DimensionMismatch(format!(
                "LU needs a square matrix, got {}x{}",
                a.rows, a.cols
            )));
        }
        let n = a.rows;
        let threshold = T::lit(PIVOT_THRESHOLD).max(T::epsilon()) * a.max_abs();
        let mut lu = a.clone();
        let mut perm: Vec<usize> = (0..n).collect();
        for k in 0..n {
            let (p, pmag) =
                (k..n)
                    .map(|i| (i, lu[(i, k)].abs()))
                    .fold((k, -T::one()), |best, cur| if cur.1 > best.1 { cur } else { best });
            if pmag == T::zero() || pmag < threshold || !pmag.is_finite() {
                return Err(Error::SingularMatrix {
                    column: k,
                    pivot: pmag.as_f64(),
                    threshold: threshold.as_f64(),
                });
            }
            if p != k {
                for j in 0..n {
                    lu.data.swap(k * n + j, p * n + j);
                }
                perm.swap(k, p);
            }
            let pivot = lu[(k, k)];
            for i in k + 1..n {
                let l = lu[(i, k)] / pivot;
                lu[(i, k)] = l;
                if l == T::zero() {
                    continue;
                }
                for j in k + 1..n {
                    let u = lu[(k, j)];
                    lu[(i, j)] -= l * u;
                }
            }
        }
        Ok(LuFactor { lu, perm })
    }

    pub fn dim(&self) -> usize {
        self.lu.rows
    }

    pub fn solve(&self, b: &[T]) -> Result<Vector<T>> {
        let n = self.dim();
        if b.len() != n {
            return Err(Error::DimensionMismatch(format!(
                "right-hand side has length {}, expected {n}",
                b.len()
            )));
        }
        let mut x: Vec<T> = self.perm.iter().map(|&p| b[p]).collect();
        for i in 0..n {
            let s = dot(&self.lu.row(i)[..i], &x[..i]);
            x[i] -= s;
        }
        for i in (0..n).rev() {
            let s = dot(&self.lu.row(i)[i + 1..], &x[i + 1..]);
            x[i] = (x[i] - s) / self.lu[(i, i)];
        }
        Ok(Vector(x))
    }

    /// Solves for every column of `b`.
    pub fn solve_matrix(&self, b: &Matrix<T>) -> Result<Matrix<T>> {
        let mut out = Matrix::zeros(b.rows, b.cols);
        for j in 0..b.cols {
            let col = self.solve(&b.column(j))?;
            for i in 0..b.rows {
                out[(i, j)] = col[i];
            }
        }
        Ok(out)
    }

    pub fn inverse(&self) -> Matrix<T> {
        self.solve_matrix(&Matrix::identity(self.dim()))
            .expect("identity has matching size")
    }
}

/// Solves `A x = b` by LU with partial pivoting.
pub fn lu_solve<T: Scalar>(a: &Matrix<T>, b: &[T]) -> Result<Vector<T>> {
    if b.len() != a.rows {
        return Err(Error::DimensionMismatch(format!(
            "matrix has {} rows, right-hand side has {}",
            a.rows,
            b.len()
        )));
    }
    LuFactor::new(a)?.solve(b)
}

/// `‖A‖₁ · ‖A⁻¹‖₁`, or `None` when `A` is singular. The empty matrix has
/// condition 1.
pub fn condition_estimate<T: Scalar>(a: &Matrix<T>) -> Option<T> {
    if a.rows == 0 {
        return Some(T::one());
    }
    let lu = LuFactor::new(a).ok()?;
    Some(a.norm_1() * lu.inverse().norm_1())
}

/// `sqrt(xᵀ Q x)` for symmetric positive definite `Q`.
pub fn weighted_norm<T: Scalar>(x: &[T], q: &Matrix<T>) -> Result<T> {
    let form = quadratic_form(x, q)?;
    if form < T::zero() {
        return Err(Error::NotSpd(format!("xᵀQx = {form:e} < 0")));
    }
    Ok(form.sqrt())
}

/// `xᵀ A x`
pub fn quadratic_form<T: Scalar>(x: &[T], a: &Matrix<T>) -> Result<T> {
    if !a.is_square() || a.rows != x.len() {
        return Err(Error::DimensionMismatch(format!(
            "quadratic form of {}x{} matrix with vector of length {}",
            a.rows,
            a.cols,
            x.len()
        )));
    }
    Ok(dot(x, &a.matvec(x)?))
}

/// Matrix exponential by scaling and squaring of a truncated Taylor series.
///
/// Intended as an oracle for small matrices; accuracy is about `1e-13`
/// relative for `‖A‖ ≤ 10` in double precision.
pub fn expm<T: Scalar>(a: &Matrix<T>) -> Result<Matrix<T>> {
    if !a.is_square() {
        return Err(Error::DimensionMismatch(format!(
            "expm needs a square matrix, got {}x{}",
            a.rows, a.cols
        )));
    }
    let n = a.rows;
    let norm = a.norm_1();
    let mut squarings = 0i32;
    if norm > T::lit(0.5) {
        squarings = (norm / T::lit(0.5)).log2().ceil().to_i32().unwrap_or(0).max(0);
    }
    let scaled = a.scaled(T::lit(0.5).powi(squarings));
    let mut sum = Matrix::identity(n);
    let mut term = Matrix::identity(n);
    for k in 1..=40 {
        term = term.matmul(&scaled)?.scaled(T::one() / T::from_usize_lossy(k));
        sum = sum.add(&term)?;
        if term.max_abs() <= T::epsilon() * sum.max_abs() {
            break;
        }
    }
    for _ in 0..squarings {
        sum = sum.matmul(&sum)?;
    }
    Ok(sum)
}

/// Eigenvalues of a symmetric matrix by cyclic Jacobi rotations, in
/// ascending order. Only the upper triangle of `a` is trusted.
pub fn symmetric_eigenvalues<T: Scalar>(a: &Matrix<T>) -> Result<Vec<T>> {
    if !a.is_square() {
        return Err(Error::DimensionMismatch("eigenvalues need a square matrix".into()));
    }
    let n = a.rows;
    let mut m = a.clone();
    for i in 0..n {
        for j in 0..i {
            m[(i, j)] = m[(j, i)];
        }
    }
    let scale = m.max_abs();
    let off = |m: &Matrix<T>| {
        let mut s = T::zero();
        for i in 0..n {
            for j in i + 1..n {
                s += m[(i, j)] * m[(i, j)];
            }
        }
        s.sqrt()
    };
    for _sweep in 0..100 {
        if off(&m) <= T::epsilon() * scale {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = m[(p, q)];
                if apq == T::zero() {
                    continue;
                }
                let app = m[(p, p)];
                let aqq = m[(q, q)];
                let theta = (aqq - app) / (T::lit(2.0) * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + T::one()).sqrt());
                let c = T::one() / (t * t + T::one()).sqrt();
                let s = t * c;
                for k in 0..n {
                    let mkp = m[(k, p)];
                    let mkq = m[(k, q)];
                    m[(k, p)] = c * mkp - s * mkq;
                    m[(k, q)] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let mpk = m[(p, k)];
                    let mqk = m[(q, k)];
                    m[(p, k)] = c * mpk - s * mqk;
                    m[(q, k)] = s * mpk + c * mqk;
                }
            }
        }
    }
    let mut eig: Vec<T> = (0..n).map(|i| m[(i, i)]).collect();
    eig.sort_by(|a, b| a.partial_cmp(b).expect("finite eigenvalues"));
    Ok(eig)
}

/// Default tolerance for [`check_symmetric_psd`].
pub const PSD_TOLERANCE: f64 = 1e-10;

/// Asymmetry `‖A − Aᵀ‖_∞` (max-entry) and smallest eigenvalue of the
/// symmetric part.
pub fn symmetry_and_min_eigenvalue<T: Scalar>(a: &Matrix<T>) -> Result<(T, T)> {
    if !a.is_square() {
        return Err(Error::DimensionMismatch("expected a square matrix".into()));
    }
    let asym = a.sub(&a.transpose())?.max_abs();
    let min_eig = symmetric_eigenvalues(&a.symmetric_part())?
        .first()
        .copied()
        .unwrap_or_else(T::zero);
    Ok((asym, min_eig))
}

/// True iff `A` is symmetric to `tol` and its symmetric part has no
/// eigenvalue below `-tol`.
pub fn check_symmetric_psd<T: Scalar>(a: &Matrix<T>, tol: T) -> bool {
    match symmetry_and_min_eigenvalue(a) {
        Ok((asym, min_eig)) => asym <= tol && min_eig >= -tol,
        Err(_) => false,
    }
}
