//! Dense complex matrices sized for a handful of qubits.
//!
//! Storage is row-major. Nothing here tries to be BLAS; the largest matrix the
//! simulator builds is 2^n x 2^n for n <= 8, and the hot path stays at 16x16.

use std::fmt;
use std::ops::{Index, IndexMut};

use num_complex::Complex64;

use crate::error::{Error, Result};

pub type Complex = Complex64;

pub const ZERO: Complex = Complex::new(0.0, 0.0);
pub const ONE: Complex = Complex::new(1.0, 0.0);
pub const I: Complex = Complex::new(0.0, 1.0);

/// Default absolute elementwise tolerance for O(1) matrices.
pub const DEFAULT_TOL: f64 = 1e-10;

const JACOBI_TOL: f64 = 1e-12;
const JACOBI_MAX_SWEEPS: usize = 100;

#[derive(Clone, PartialEq)]
pub struct ComplexMatrix {
    rows: usize,
    cols: usize,
    data: Vec<Complex>,
}

impl ComplexMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        assert!(rows > 0 && cols > 0, "matrix dimensions must be positive");
        Self {
            rows,
            cols,
            data: vec![ZERO; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = ONE;
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<Complex>) -> Result<Self> {
        if rows == 0 || cols == 0 || data.len() != rows * cols {
            return Err(Error::shape(format!(
                "{} entries cannot fill a {rows}x{cols} matrix",
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    /// Build from nested rows. Panics on ragged input; meant for literals.
    pub fn from_rows<R: AsRef<[Complex]>>(rows: &[R]) -> Self {
        let cols = rows[0].as_ref().len();
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            assert_eq!(r.as_ref().len(), cols, "ragged matrix literal");
            data.extend_from_slice(r.as_ref());
        }
        Self {
            rows: rows.len(),
            cols,
            data,
        }
    }

    pub fn from_real_rows<R: AsRef<[f64]>>(rows: &[R]) -> Self {
        let complex: Vec<Vec<Complex>> = rows
            .iter()
            .map(|r| r.as_ref().iter().map(|&x| Complex::new(x, 0.0)).collect())
            .collect();
        Self::from_rows(&complex)
    }

    pub fn diag(values: &[Complex]) -> Self {
        let mut m = Self::zeros(values.len(), values.len());
        for (i, &v) in values.iter().enumerate() {
            m[(i, i)] = v;
        }
        m
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

    pub fn data(&self) -> &[Complex] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [Complex] {
        &mut self.data
    }

    pub fn matmul(&self, other: &ComplexMatrix) -> Result<ComplexMatrix> {
        if self.cols != other.rows {
            return Err(Error::shape(format!(
                "cannot multiply {}x{} by {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut out = ComplexMatrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            let out_row = &mut out.data[i * other.cols..(i + 1) * other.cols];
            for k in 0..self.cols {
                let a = self.data[i * self.cols + k];
                if a == ZERO {
                    continue;
                }
                let b_row = &other.data[k * other.cols..(k + 1) * other.cols];
                for (o, &b) in out_row.iter_mut().zip(b_row) {
                    *o += a * b;
                }
            }
        }
        Ok(out)
    }

    pub fn kron(&self, other: &ComplexMatrix) -> ComplexMatrix {
        let rows = self.rows * other.rows;
        let cols = self.cols * other.cols;
        let mut out = ComplexMatrix::zeros(rows, cols);
        for i in 0..self.rows {
            for j in 0..self.cols {
                let a = self.data[i * self.cols + j];
                for k in 0..other.rows {
                    for l in 0..other.cols {
                        out.data[(i * other.rows + k) * cols + j * other.cols + l] = a * other.data[k * other.cols + l];
                    }
                }
            }
        }
        out
    }

    /// Conjugate transpose.
    pub fn adjoint(&self) -> ComplexMatrix {
        let mut out = ComplexMatrix::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out.data[j * self.rows + i] = self.data[i * self.cols + j].conj();
            }
        }
        out
    }

    pub fn trace(&self) -> Result<Complex> {
        if !self.is_square() {
            return Err(Error::shape(format!(
                "trace of non-square {}x{} matrix",
                self.rows, self.cols
            )));
        }
        Ok((0..self.rows).map(|i| self.data[i * self.cols + i]).sum())
    }

    pub fn scale(&self, factor: Complex) -> ComplexMatrix {
        ComplexMatrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&x| x * factor).collect(),
        }
    }

    pub fn scale_real(&self, factor: f64) -> ComplexMatrix {
        self.scale(Complex::new(factor, 0.0))
    }

    pub fn add(&self, other: &ComplexMatrix) -> Result<ComplexMatrix> {
        self.check_same_shape(other)?;
        Ok(ComplexMatrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&other.data).map(|(a, b)| a + b).collect(),
        })
    }

    pub fn sub(&self, other: &ComplexMatrix) -> Result<ComplexMatrix> {
        self.check_same_shape(other)?;
        Ok(ComplexMatrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect(),
        })
    }

    fn check_same_shape(&self, other: &ComplexMatrix) -> Result<()> {
        if self.rows != other.rows || self.cols != other.cols {
            return Err(Error::shape(format!(
                "shape mismatch: {}x{} vs {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        Ok(())
    }

    pub(crate) fn add_assign(&mut self, other: &ComplexMatrix) {
        debug_assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    /// Largest elementwise modulus of `self - other`; infinite on shape mismatch.
    pub fn max_abs_diff(&self, other: &ComplexMatrix) -> f64 {
        if self.rows != other.rows || self.cols != other.cols {
            return f64::INFINITY;
        }
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max)
    }

    pub fn approx_eq(&self, other: &ComplexMatrix, tol: f64) -> bool {
        self.max_abs_diff(other) <= tol
    }

    /// Largest deviation `|A_ij - conj(A_ji)|`.
    pub fn hermiticity_deviation(&self) -> f64 {
        if !self.is_square() {
            return f64::INFINITY;
        }
        let n = self.rows;
        let mut worst: f64 = 0.0;
        for i in 0..n {
            for j in i..n {
                let d = (self.data[i * n + j] - self.data[j * n + i].conj()).norm();
                worst = worst.max(d);
            }
        }
        worst
    }

    /// Largest elementwise deviation of `A†A` from the identity.
    pub fn unitarity_deviation(&self) -> f64 {
        if !self.is_square() {
            return f64::INFINITY;
        }
        let prod = self.adjoint().matmul(self).expect("square matrices always conform");
        prod.max_abs_diff(&ComplexMatrix::identity(self.rows))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|c| c.re.is_finite() && c.im.is_finite())
    }

    /// Real eigenvalues of a Hermitian matrix, ascending, via cyclic Jacobi
    /// rotations. `tol` bounds the accepted Hermiticity deviation.
    pub fn hermitian_eigenvalues(&self, tol: f64) -> Result<Vec<f64>> {
        if !self.is_square() {
            return Err(Error::shape("eigenvalues of a non-square matrix"));
        }
        let dev = self.hermiticity_deviation();
        if dev > tol {
            return Err(Error::Validation {
                what: "matrix is not Hermitian".into(),
                deviation: dev,
            });
        }
        let n = self.rows;
        // Symmetrize so the rotations act on an exactly Hermitian matrix.
        let mut a = self.clone();
        for i in 0..n {
            a.data[i * n + i] = Complex::new(a.data[i * n + i].re, 0.0);
            for j in i + 1..n {
                let v = (a.data[i * n + j] + a.data[j * n + i].conj()) * 0.5;
                a.data[i * n + j] = v;
                a.data[j * n + i] = v.conj();
            }
        }
        let scale = a.data.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt().max(1.0);
        let threshold = JACOBI_TOL * scale;

        for _ in 0..JACOBI_MAX_SWEEPS {
            if off_diagonal_norm(&a) < threshold {
                break;
            }
            for p in 0..n {
                for q in p + 1..n {
                    jacobi_rotate(&mut a, p, q);
                }
            }
        }
        let off = off_diagonal_norm(&a);
        if off >= threshold.max(1e-9 * scale) {
            return Err(Error::Numerical(format!(
                "Jacobi eigensolver did not converge (off-diagonal norm {off:.3e})"
            )));
        }
        let mut eig: Vec<f64> = (0..n).map(|i| a.data[i * n + i].re).collect();
        eig.sort_by(|x, y| x.total_cmp(y));
        Ok(eig)
    }
}

fn off_diagonal_norm(a: &ComplexMatrix) -> f64 {
    let n = a.rows;
    let mut s = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                s += a.data[i * n + j].norm_sqr();
            }
        }
    }
    s.sqrt()
}

/// Zero the (p, q) pair with `A <- G† A G`, where G is a phase-corrected
/// Givens rotation.
fn jacobi_rotate(a: &mut ComplexMatrix, p: usize, q: usize) {
    let n = a.rows;
    let apq = a.data[p * n + q];
    let mag = apq.norm();
    if mag < 1e-300 {
        return;
    }
    let phase = apq / mag; // e^{i phi}
    let app = a.data[p * n + p].re;
    let aqq = a.data[q * n + q].re;
    let tau = (aqq - app) / (2.0 * mag);
    let t = if tau >= 0.0 {
        1.0 / (tau + (1.0 + tau * tau).sqrt())
    } else {
        -1.0 / (-tau + (1.0 + tau * tau).sqrt())
    };
    let c = 1.0 / (1.0 + t * t).sqrt();
    let s = t * c;

    let g_pp = Complex::new(c, 0.0);
    let g_pq = Complex::new(s, 0.0);
    let g_qp = -phase.conj() * s;
    let g_qq = phase.conj() * c;

    for k in 0..n {
        let akp = a.data[k * n + p];
        let akq = a.data[k * n + q];
        a.data[k * n + p] = akp * g_pp + akq * g_qp;
        a.data[k * n + q] = akp * g_pq + akq * g_qq;
    }
    for k in 0..n {
        let apk = a.data[p * n + k];
        let aqk = a.data[q * n + k];
        a.data[p * n + k] = g_pp.conj() * apk + g_qp.conj() * aqk;
        a.data[q * n + k] = g_pq.conj() * apk + g_qq.conj() * aqk;
    }
    a.data[p * n + q] = ZERO;
    a.data[q * n + p] = ZERO;
    a.data[p * n + p] = Complex::new(a.data[p * n + p].re, 0.0);
    a.data[q * n + q] = Complex::new(a.data[q * n + q].re, 0.0);
}

impl Index<(usize, usize)> for ComplexMatrix {
    type Output = Complex;

    fn index(&self, (r, c): (usize, usize)) -> &Complex {
        assert!(r < self.rows && c < self.cols, "index ({r}, {c}) out of bounds");
        &self.data[r * self.cols + c]
    }
}

impl IndexMut<(usize, usize)> for ComplexMatrix {
    fn index_mut(&mut self, (r, c): (usize, usize)) -> &mut Complex {
        assert!(r < self.rows && c < self.cols, "index ({r}, {c}) out of bounds");
        &mut self.data[r * self.cols + c]
    }
}

impl fmt::Debug for ComplexMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "ComplexMatrix {}x{} [", self.rows, self.cols)?;
        for r in 0..self.rows {
            write!(f, "  ")?;
            for c in 0..self.cols {
                let v = self.data[r * self.cols + c];
                write!(f, "{:+.4}{:+.4}i ", v.re, v.im)?;
            }
            writeln!(f)?;
        }
        write!(f, "]")
    }
}

pub mod pauli {
    use super::*;

    pub fn i2() -> ComplexMatrix {
        ComplexMatrix::identity(2)
    }

    pub fn x() -> ComplexMatrix {
        ComplexMatrix::from_real_rows(&[[0.0, 1.0], [1.0, 0.0]])
    }

    pub fn y() -> ComplexMatrix {
        ComplexMatrix::from_rows(&[[ZERO, -I], [I, ZERO]])
    }

    pub fn z() -> ComplexMatrix {
        ComplexMatrix::from_real_rows(&[[1.0, 0.0], [0.0, -1.0]])
    }
}
