//! Dense complex linear algebra, least squares and circularly-symmetric
//! Gaussian sampling.
//!
//! Everything here is generic over a real scalar `T` (`f32` or `f64`).
//! [`ComplexMatrix`] is a small row-major dense matrix; column vectors are
//! matrices with a single column.

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{Index, IndexMut};

use num_complex::Complex;
use num_traits::{Float, FloatConst, FromPrimitive, ToPrimitive};
use rand::distr::uniform::SampleUniform;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};

/// Real scalar the numerical core is generic over.
pub trait Real:
    Float
    + FloatConst
    + FromPrimitive
    + ToPrimitive
    + SampleUniform
    + Sum
    + Debug
    + Display
    + Default
    + Send
    + Sync
    + 'static
{
    /// Converts an `f64` literal; panics only for scalars that cannot hold it.
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("literal representable in scalar type")
    }

    /// Converts a count.
    fn from_count(n: usize) -> Self {
        Self::from_usize(n).expect("count representable in scalar type")
    }

    fn to_f64_lossy(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl Real for f32 {}
impl Real for f64 {}

/// Relative singular-value cutoff used by [`solve_least_squares`].
pub const RANK_CUTOFF: f64 = 1e-12;

/// Row-major dense complex matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct ComplexMatrix<T> {
    rows: usize,
    cols: usize,
    data: Vec<Complex<T>>,
}

impl<T: Real> ComplexMatrix<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![Complex::new(T::zero(), T::zero()); rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = Complex::new(T::one(), T::zero());
        }
        m
    }

    /// Builds a matrix from row-major entries, rejecting bad lengths and
    /// non-finite values.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<Complex<T>>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::DimensionMismatch(format!(
                "{} entries for a {rows}x{cols} matrix",
                data.len()
            )));
        }
        if data.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::NonFinite);
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> Complex<T>) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Self { rows, cols, data }
    }

    /// Column vector from entries.
    pub fn column_vector(entries: Vec<Complex<T>>) -> Self {
        let rows = entries.len();
        Self {
            rows,
            cols: 1,
            data: entries,
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn as_slice(&self) -> &[Complex<T>] {
        &self.data
    }

    pub fn row(&self, r: usize) -> &[Complex<T>] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn column(&self, c: usize) -> Self {
        Self::column_vector((0..self.rows).map(|r| self[(r, c)]).collect())
    }

    pub fn set_column(&mut self, c: usize, values: &Self) {
        debug_assert_eq!(values.len(), self.rows);
        for r in 0..self.rows {
            self[(r, c)] = values.data[r];
        }
    }

    /// Sub-matrix made of the given columns, in the given order.
    pub fn select_columns(&self, cols: &[usize]) -> Self {
        Self::from_fn(self.rows, cols.len(), |r, j| self[(r, cols[j])])
    }

    /// Sub-matrix of consecutive rows `start..end`.
    pub fn row_range(&self, start: usize, end: usize) -> Self {
        Self {
            rows: end - start,
            cols: self.cols,
            data: self.data[start * self.cols..end * self.cols].to_vec(),
        }
    }

    /// Number of entries.
    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |r, c| self[(c, r)])
    }

    /// Conjugate transpose.
    pub fn adjoint(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |r, c| self[(c, r)].conj())
    }

    pub fn conj(&self) -> Self {
        self.map(|z| z.conj())
    }

    pub fn map(&self, f: impl Fn(Complex<T>) -> Complex<T>) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&z| f(z)).collect(),
        }
    }

    pub fn scale(&self, s: Complex<T>) -> Self {
        self.map(|z| z * s)
    }

    pub fn scale_real(&self, s: T) -> Self {
        self.map(|z| z * s)
    }

    pub fn matmul(&self, rhs: &Self) -> Result<Self> {
        if self.cols != rhs.rows {
            return Err(Error::DimensionMismatch(format!(
                "cannot multiply {}x{} by {}x{}",
                self.rows, self.cols, rhs.rows, rhs.cols
            )));
        }
        let mut out = Self::zeros(self.rows, rhs.cols);
        for i in 0..self.rows {
            let out_row = &mut out.data[i * rhs.cols..(i + 1) * rhs.cols];
            for k in 0..self.cols {
                let a = self.data[i * self.cols + k];
                if a.re == T::zero() && a.im == T::zero() {
                    continue;
                }
                let rhs_row = &rhs.data[k * rhs.cols..(k + 1) * rhs.cols];
                for (o, &b) in out_row.iter_mut().zip(rhs_row) {
                    *o = *o + a * b;
                }
            }
        }
        Ok(out)
    }

    pub fn add(&self, rhs: &Self) -> Result<Self> {
        self.zip_with(rhs, |a, b| a + b)
    }

    pub fn sub(&self, rhs: &Self) -> Result<Self> {
        self.zip_with(rhs, |a, b| a - b)
    }

    fn zip_with(&self, rhs: &Self, f: impl Fn(Complex<T>, Complex<T>) -> Complex<T>) -> Result<Self> {
        if self.shape() != rhs.shape() {
            return Err(Error::DimensionMismatch(format!(
                "{}x{} vs {}x{}",
                self.rows, self.cols, rhs.rows, rhs.cols
            )));
        }
        Ok(Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&rhs.data).map(|(&a, &b)| f(a, b)).collect(),
        })
    }

    pub fn frobenius_norm_sqr(&self) -> T {
        self.data.iter().map(|z| z.norm_sqr()).sum()
    }

    pub fn frobenius_norm(&self) -> T {
        self.frobenius_norm_sqr().sqrt()
    }

    /// Largest entry-wise modulus.
    pub fn max_abs(&self) -> T {
        self.data.iter().fold(T::zero(), |m, z| m.max(z.norm()))
    }

    /// `selfᴴ · rhs` for two column vectors of equal length.
    pub fn inner(&self, rhs: &Self) -> Complex<T> {
        debug_assert_eq!(self.len(), rhs.len());
        self.data
            .iter()
            .zip(&rhs.data)
            .fold(Complex::new(T::zero(), T::zero()), |acc, (a, b)| acc + a.conj() * b)
    }

    /// Outer product `u · wᴴ` of two column vectors.
    pub fn outer_adjoint(u: &Self, w: &Self) -> Self {
        Self::from_fn(u.len(), w.len(), |r, c| u.data[r] * w.data[c].conj())
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|z| z.re.is_finite() && z.im.is_finite())
    }

    /// Converts the scalar type (used to cross-check f32 against f64).
    pub fn cast<U: Real>(&self) -> ComplexMatrix<U> {
        ComplexMatrix {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .map(|z| Complex::new(U::lit(z.re.to_f64_lossy()), U::lit(z.im.to_f64_lossy())))
                .collect(),
        }
    }
}

impl<T> Index<(usize, usize)> for ComplexMatrix<T> {
    type Output = Complex<T>;

    fn index(&self, (r, c): (usize, usize)) -> &Complex<T> {
        debug_assert!(r < self.rows && c < self.cols);
        &self.data[r * self.cols + c]
    }
}

impl<T> IndexMut<(usize, usize)> for ComplexMatrix<T> {
    fn index_mut(&mut self, (r, c): (usize, usize)) -> &mut Complex<T> {
        debug_assert!(r < self.rows && c < self.cols);
        &mut self.data[r * self.cols + c]
    }
}

/// Thin singular value decomposition `A = U·diag(σ)·Vᴴ` computed with
/// one-sided (Hestenes) Jacobi rotations. `u_scaled` holds `U·diag(σ)`.
struct JacobiSvd<T> {
    u_scaled: ComplexMatrix<T>,
    v: ComplexMatrix<T>,
    sigma: Vec<T>,
}

fn jacobi_svd<T: Real>(a: &ComplexMatrix<T>) -> JacobiSvd<T> {
    let (m, n) = a.shape();
    // Column-major working copies keep the rotations cache friendly.
    let mut u: Vec<Vec<Complex<T>>> = (0..n).map(|j| a.column(j).data).collect();
    let mut v: Vec<Vec<Complex<T>>> = (0..n)
        .map(|j| {
            let mut e = vec![Complex::new(T::zero(), T::zero()); n];
            e[j] = Complex::new(T::one(), T::zero());
            e
        })
        .collect();
    let tol = T::epsilon() * T::from_count(m.max(1));
    for _sweep in 0..80 {
        let mut rotated = false;
        for p in 0..n {
            for q in p + 1..n {
                let alpha: T = u[p].iter().map(|z| z.norm_sqr()).sum();
                let beta: T = u[q].iter().map(|z| z.norm_sqr()).sum();
                let gamma = u[p]
                    .iter()
                    .zip(&u[q])
                    .fold(Complex::new(T::zero(), T::zero()), |acc, (x, y)| acc + x.conj() * y);
                let g = gamma.norm();
                if g == T::zero() || g <= tol * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let phase = gamma / g;
                let zeta = (beta - alpha) / (g + g);
                let t = zeta.signum() / (zeta.abs() + (T::one() + zeta * zeta).sqrt());
                let c = T::one() / (T::one() + t * t).sqrt();
                let s = c * t;
                let pc = phase.conj();
                rotate(&mut u, p, q, c, s, pc);
                rotate(&mut v, p, q, c, s, pc);
            }
        }
        if !rotated {
            break;
        }
    }
    let sigma = u
        .iter()
        .map(|col| col.iter().map(|z| z.norm_sqr()).sum::<T>().sqrt())
        .collect();
    JacobiSvd {
        u_scaled: ComplexMatrix::from_fn(m, n, |r, c| u[c][r]),
        v: ComplexMatrix::from_fn(n, n, |r, c| v[c][r]),
        sigma,
    }
}

fn rotate<T: Real>(cols: &mut [Vec<Complex<T>>], p: usize, q: usize, c: T, s: T, pc: Complex<T>) {
    let (lo, hi) = cols.split_at_mut(q);
    let (cp, cq) = (&mut lo[p], &mut hi[0]);
    for (x, y) in cp.iter_mut().zip(cq.iter_mut()) {
        let w = *y * pc;
        let nx = *x * c - w * s;
        let ny = *x * s + w * c;
        *x = nx;
        *y = ny;
    }
}

/// Least-squares solution together with the numerical rank of `A`.
#[derive(Clone, Debug)]
pub struct LeastSquares<T> {
    pub solution: ComplexMatrix<T>,
    pub rank: usize,
}

/// Minimum-norm least-squares solve with rank reporting.
pub fn least_squares<T: Real>(a: &ComplexMatrix<T>, b: &ComplexMatrix<T>) -> Result<LeastSquares<T>> {
    let (m, n) = a.shape();
    if m == 0 || n == 0 {
        return Err(Error::InvalidArgument(format!("empty system matrix {m}x{n}")));
    }
    if b.rows() != m {
        return Err(Error::DimensionMismatch(format!(
            "A has {m} rows but B has {}",
            b.rows()
        )));
    }
    let svd = jacobi_svd(a);
    let sigma_max = svd.sigma.iter().fold(T::zero(), |acc, &s| acc.max(s));
    let cutoff = sigma_max * T::lit(RANK_CUTOFF);
    let p = b.cols();
    let mut x = ComplexMatrix::zeros(n, p);
    let mut rank = 0;
    for (j, &s) in svd.sigma.iter().enumerate() {
        if s <= cutoff || s == T::zero() {
            continue;
        }
        rank += 1;
        let inv = T::one() / (s * s);
        for col in 0..p {
            // (u_j / σ_j)ᴴ b / σ_j with u_scaled = u_j σ_j
            let mut acc = Complex::new(T::zero(), T::zero());
            for r in 0..m {
                acc = acc + svd.u_scaled[(r, j)].conj() * b[(r, col)];
            }
            let coeff = acc * inv;
            for r in 0..n {
                x[(r, col)] = x[(r, col)] + svd.v[(r, j)] * coeff;
            }
        }
    }
    Ok(LeastSquares { solution: x, rank })
}

/// Returns `X` minimizing `‖A·X − B‖_F`; the minimum-norm minimizer when
/// `A` is rank deficient.
pub fn solve_least_squares<T: Real>(a: &ComplexMatrix<T>, b: &ComplexMatrix<T>) -> Result<ComplexMatrix<T>> {
    least_squares(a, b).map(|ls| ls.solution)
}

/// Draws `count` i.i.d. `CN(0, variance)` samples.
pub fn sample_cn<T: Real, R: Rng + ?Sized>(variance: T, count: usize, rng: &mut R) -> Result<Vec<Complex<T>>>
where
    StandardNormal: Distribution<T>,
{
    if variance < T::zero() || !variance.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "noise variance {variance} must be finite and >= 0"
        )));
    }
    let sd = (variance / T::lit(2.0)).sqrt();
    Ok((0..count)
        .map(|_| {
            let re: T = StandardNormal.sample(rng);
            let im: T = StandardNormal.sample(rng);
            Complex::new(re * sd, im * sd)
        })
        .collect())
}

/// Unit-modulus complex number `exp(j·phase)`.
pub fn cis<T: Real>(phase: T) -> Complex<T> {
    Complex::new(phase.cos(), phase.sin())
}
