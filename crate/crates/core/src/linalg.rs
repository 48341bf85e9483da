//! Dense row-major matrices, square and least-squares solvers, and the
//! thresholded vector comparison used to decide whether two recovered
//! affine tuples describe the same region.

use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::ops::{Index, IndexMut};

use crate::error::Error;

/// Relative pivot / diagonal threshold below which a system is rank deficient.
pub const RANK_TOLERANCE: f64 = 1e-10;

#[derive(Clone, PartialEq)]
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

    /// Builds a matrix from row-major data. Panics if the length is wrong.
    pub fn from_row_major(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "row-major data has wrong length");
        Self { rows, cols, data }
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Self {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            let r = r.as_ref();
            assert_eq!(r.len(), cols, "ragged rows");
            data.extend_from_slice(r);
        }
        Self {
            rows: rows.len(),
            cols,
            data,
        }
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
    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn column(&self, c: usize) -> Vec<f64> {
        (0..self.rows).map(|r| self[(r, c)]).collect()
    }

    pub fn transpose(&self) -> Matrix {
        let mut t = Matrix::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                t[(c, r)] = self[(r, c)];
            }
        }
        t
    }

    pub fn mul(&self, rhs: &Matrix) -> Matrix {
        assert_eq!(self.cols, rhs.rows, "inner dimensions differ");
        let mut out = Matrix::zeros(self.rows, rhs.cols);
        for r in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(r, k)];
                if a == 0.0 {
                    continue;
                }
                let src = rhs.row(k);
                let dst = out.row_mut(r);
                for (d, s) in dst.iter_mut().zip(src) {
                    *d += a * s;
                }
            }
        }
        out
    }

    pub fn mul_vec(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(
            self.cols,
            v.len(),
            "vector length differs from column count"
        );
        (0..self.rows).map(|r| dot(self.row(r), v)).collect()
    }

    /// Row vector times matrix.
    pub fn vec_mul(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(self.rows, v.len(), "vector length differs from row count");
        let mut out = vec![0.0; self.cols];
        for (r, &a) in v.iter().enumerate() {
            if a == 0.0 {
                continue;
            }
            for (o, x) in out.iter_mut().zip(self.row(r)) {
                *o += a * x;
            }
        }
        out
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, x| m.max(x.abs()))
    }
}

impl Index<(usize, usize)> for Matrix {
    type Output = f64;
    #[inline]
    fn index(&self, (r, c): (usize, usize)) -> &f64 {
        debug_assert!(r < self.rows && c < self.cols);
        &self.data[r * self.cols + c]
    }
}

impl IndexMut<(usize, usize)> for Matrix {
    #[inline]
    fn index_mut(&mut self, (r, c): (usize, usize)) -> &mut f64 {
        debug_assert!(r < self.rows && c < self.cols);
        &mut self.data[r * self.cols + c]
    }
}

impl fmt::Debug for Matrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut l = f.debug_list();
        for r in 0..self.rows {
            l.entry(&self.row(r));
        }
        l.finish()
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm_inf(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

pub fn norm2(v: &[f64]) -> f64 {
    libm::sqrt(dot(v, v))
}

/// `coefficients · w = rhs` with at least as many equations as unknowns.
#[derive(Debug, Clone)]
pub struct LinearSystem {
    pub coefficients: Matrix,
    pub rhs: Vec<f64>,
}

impl LinearSystem {
    pub fn new(coefficients: Matrix, rhs: Vec<f64>) -> Result<Self, Error> {
        if coefficients.rows() != rhs.len() {
            return Err(Error::Shape {
                expected: coefficients.rows(),
                found: rhs.len(),
            });
        }
        if coefficients.rows() < coefficients.cols() {
            return Err(Error::Underdetermined {
                equations: coefficients.rows(),
                unknowns: coefficients.cols(),
            });
        }
        if !coefficients
            .as_slice()
            .iter()
            .chain(&rhs)
            .all(|x| x.is_finite())
        {
            return Err(Error::NonFinite);
        }
        Ok(Self { coefficients, rhs })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Solution {
    pub solution: Vec<f64>,
    /// Infinity norm of `coefficients · solution − rhs`.
    pub residual_norm: f64,
}

/// Solves the system exactly (square, partial pivoting) or in the
/// least-squares sense (Householder QR) when it has more rows than columns.
pub fn solve(sys: &LinearSystem) -> Result<Solution, Error> {
    let a = &sys.coefficients;
    let solution = if a.rows() == a.cols() {
        lu_solve(a, &sys.rhs)?
    } else {
        qr_solve(a, &sys.rhs)?
    };
    let residual_norm = (0..a.rows())
        .map(|r| (dot(a.row(r), &solution) - sys.rhs[r]).abs())
        .fold(0.0, f64::max);
    Ok(Solution {
        solution,
        residual_norm,
    })
}

fn lu_solve(a: &Matrix, b: &[f64]) -> Result<Vec<f64>, Error> {
    let n = a.rows();
    let mut m = a.clone();
    let mut x = b.to_vec();
    let scale = m.max_abs();
    if scale == 0.0 {
        return Err(Error::Degenerate {
            rank: 0,
            unknowns: n,
        });
    }
    for col in 0..n {
        let (piv, piv_abs) =
            (col..n)
                .map(|r| (r, m[(r, col)].abs()))
                .fold(
                    (col, -1.0),
                    |best, cur| if cur.1 > best.1 { cur } else { best },
                );
        if piv_abs <= RANK_TOLERANCE * scale {
            return Err(Error::Degenerate {
                rank: col,
                unknowns: n,
            });
        }
        if piv != col {
            for c in 0..n {
                let tmp = m[(col, c)];
                m[(col, c)] = m[(piv, c)];
                m[(piv, c)] = tmp;
            }
            x.swap(col, piv);
        }
        let p = m[(col, col)];
        for r in col + 1..n {
            let factor = m[(r, col)] / p;
            if factor == 0.0 {
                continue;
            }
            m[(r, col)] = 0.0;
            for c in col + 1..n {
                m[(r, c)] -= factor * m[(col, c)];
            }
            x[r] -= factor * x[col];
        }
    }
    back_substitute(&m, &mut x, n);
    Ok(x)
}

fn qr_solve(a: &Matrix, b: &[f64]) -> Result<Vec<f64>, Error> {
    let (rows, n) = (a.rows(), a.cols());
    let mut r = a.clone();
    let mut y = b.to_vec();
    let scale = r.max_abs();
    if scale == 0.0 {
        return Err(Error::Degenerate {
            rank: 0,
            unknowns: n,
        });
    }
    let mut v = vec![0.0; rows];
    for col in 0..n {
        let norm = libm::sqrt((col..rows).map(|i| r[(i, col)] * r[(i, col)]).sum::<f64>());
        if norm <= RANK_TOLERANCE * scale {
            return Err(Error::Degenerate {
                rank: col,
                unknowns: n,
            });
        }
        let alpha = if r[(col, col)] > 0.0 { -norm } else { norm };
        for i in col..rows {
            v[i] = r[(i, col)];
        }
        v[col] -= alpha;
        let vnorm2: f64 = (col..rows).map(|i| v[i] * v[i]).sum();
        if vnorm2 == 0.0 {
            continue;
        }
        for c in col..n {
            let s: f64 = (col..rows).map(|i| v[i] * r[(i, c)]).sum::<f64>() * 2.0 / vnorm2;
            for i in col..rows {
                r[(i, c)] -= s * v[i];
            }
        }
        let s: f64 = (col..rows).map(|i| v[i] * y[i]).sum::<f64>() * 2.0 / vnorm2;
        for i in col..rows {
            y[i] -= s * v[i];
        }
    }
    back_substitute(&r, &mut y, n);
    y.truncate(n);
    Ok(y)
}

/// Upper-triangular back substitution on the leading `n × n` block.
fn back_substitute(u: &Matrix, x: &mut [f64], n: usize) {
    for row in (0..n).rev() {
        let mut acc = x[row];
        for c in row + 1..n {
            acc -= u[(row, c)] * x[c];
        }
        x[row] = acc / u[(row, row)];
    }
}

/// Thresholded equality: coordinates further apart than `phi` are
/// mismatches, and up to `d_phi` mismatches are tolerated.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CompareConfig {
    pub phi: f64,
    pub d_phi: usize,
    /// When set, `phi` is multiplied by `max(1, ‖a‖∞, ‖b‖∞)` per comparison.
    pub relative: bool,
}

impl CompareConfig {
    pub fn new(phi: f64, d_phi: usize) -> Result<Self, Error> {
        if !(phi > 0.0) {
            return Err(Error::InvalidConfig("phi must be positive"));
        }
        Ok(Self {
            phi,
            d_phi,
            relative: false,
        })
    }

    pub fn relative(mut self) -> Self {
        self.relative = true;
        self
    }

    pub fn with_d_phi(mut self, d_phi: usize) -> Self {
        self.d_phi = d_phi;
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Comparison {
    pub equal: bool,
    pub mismatches: usize,
}

pub fn vectors_equal(a: &[f64], b: &[f64], cfg: &CompareConfig) -> Result<Comparison, Error> {
    if a.len() != b.len() {
        return Err(Error::Shape {
            expected: a.len(),
            found: b.len(),
        });
    }
    let phi = if cfg.relative {
        cfg.phi * 1f64.max(norm_inf(a)).max(norm_inf(b))
    } else {
        cfg.phi
    };
    // NaN marks an unrecovered coordinate and always counts as a mismatch.
    let mismatches = a
        .iter()
        .zip(b)
        .filter(|(x, y)| !((*x - *y).abs() < phi))
        .count();
    Ok(Comparison {
        equal: mismatches <= cfg.d_phi,
        mismatches,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn sys(rows: &[&[f64]], rhs: &[f64]) -> LinearSystem {
        LinearSystem::new(Matrix::from_rows(rows), rhs.to_vec()).unwrap()
    }

    #[test]
    fn diagonal_square_system() {
        let s = solve(&sys(&[&[2.0, 0.0], &[0.0, 4.0]], &[2.0, 8.0])).unwrap();
        assert_eq!(s.solution, vec![1.0, 2.0]);
        assert_eq!(s.residual_norm, 0.0);
    }

    #[test]
    fn identity_returns_rhs() {
        let b = [3.5, -1.25, 7.0];
        let s = solve(&LinearSystem::new(Matrix::identity(3), b.to_vec()).unwrap()).unwrap();
        assert_eq!(s.solution, b.to_vec());
    }

    #[test]
    fn overdetermined_recovers_known_solution() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let w: Vec<f64> = (0..3).map(|_| rng.random_range(-2.0..2.0)).collect();
            let a = Matrix::from_row_major(
                6,
                3,
                (0..18).map(|_| rng.random_range(-1.0..1.0)).collect(),
            );
            let b = a.mul_vec(&w);
            let s = solve(&LinearSystem::new(a, b).unwrap()).unwrap();
            let err = s
                .solution
                .iter()
                .zip(&w)
                .map(|(x, y)| (x - y).abs())
                .fold(0.0, f64::max);
            assert!(err < 1e-9, "error {err}");
            assert!(s.residual_norm < 1e-12);
        }
    }

    #[test]
    fn least_squares_matches_normal_equations() {
        // Noisy right-hand side: the QR answer must satisfy Aᵀ(Aw − b) = 0.
        let a = Matrix::from_rows(&[[1.0, 0.0], [1.0, 1.0], [1.0, 2.0], [1.0, 3.0]]);
        let b = vec![0.1, 0.9, 2.2, 2.9];
        let s = solve(&LinearSystem::new(a.clone(), b.clone()).unwrap()).unwrap();
        let r: Vec<f64> = a
            .mul_vec(&s.solution)
            .iter()
            .zip(&b)
            .map(|(x, y)| x - y)
            .collect();
        let g = a.transpose().mul_vec(&r);
        assert!(norm_inf(&g) < 1e-12, "gradient {g:?}");
        assert!(s.residual_norm > 0.0);
    }

    #[test]
    fn rank_deficient_is_reported() {
        let err = solve(&sys(&[&[1.0, 2.0], &[2.0, 4.0]], &[1.0, 2.0])).unwrap_err();
        assert!(matches!(
            err,
            Error::Degenerate {
                rank: 1,
                unknowns: 2
            }
        ));
        let err = solve(&sys(
            &[&[1.0, 2.0], &[2.0, 4.0], &[3.0, 6.0]],
            &[1.0, 2.0, 3.0],
        ))
        .unwrap_err();
        assert!(matches!(err, Error::Degenerate { .. }));
    }

    #[test]
    fn underdetermined_rejected() {
        let err = LinearSystem::new(Matrix::zeros(1, 2), vec![0.0]).unwrap_err();
        assert!(matches!(err, Error::Underdetermined { .. }));
    }

    #[test]
    fn compare_examples() {
        let c = CompareConfig::new(1e-8, 0).unwrap();
        let r = vectors_equal(&[1.0, 2.0], &[1.0 + 1e-10, 2.0 - 1e-10], &c).unwrap();
        assert_eq!(
            r,
            Comparison {
                equal: true,
                mismatches: 0
            }
        );

        let c = CompareConfig::new(1e-8, 1).unwrap();
        let r = vectors_equal(&[1.0, 2.0, 3.0], &[1.0, 2.0, 9.0], &c).unwrap();
        assert_eq!(
            r,
            Comparison {
                equal: true,
                mismatches: 1
            }
        );

        let c = CompareConfig::new(0.5, 0).unwrap();
        assert!(!vectors_equal(&[1.0], &[2.0], &c).unwrap().equal);

        assert!(vectors_equal(&[1.0], &[1.0, 2.0], &c).is_err());
        assert!(CompareConfig::new(0.0, 0).is_err());
    }

    #[test]
    fn nan_coordinates_are_mismatches() {
        let c = CompareConfig::new(1e-3, 1).unwrap();
        let r = vectors_equal(&[1.0, f64::NAN], &[1.0, f64::NAN], &c).unwrap();
        assert_eq!(r.mismatches, 1);
    }

    proptest::proptest! {
        #[test]
        fn compare_symmetric_and_reflexive(
            a in proptest::collection::vec(-1e3f64..1e3, 1..12),
            noise in proptest::collection::vec(-1e-3f64..1e-3, 12),
            phi in 1e-9f64..1.0,
            d_phi in 0usize..4,
        ) {
            let b: Vec<f64> = a.iter().zip(&noise).map(|(x, n)| x + n).collect();
            let c = CompareConfig::new(phi, d_phi).unwrap();
            let ab = vectors_equal(&a, &b, &c).unwrap();
            let ba = vectors_equal(&b, &a, &c).unwrap();
            proptest::prop_assert_eq!(ab, ba);
            let aa = vectors_equal(&a, &a, &c).unwrap();
            proptest::prop_assert_eq!(aa, Comparison { equal: true, mismatches: 0 });
        }

        #[test]
        fn square_solve_recovers_solution(
            seed in 0u64..1000,
            n in 1usize..7,
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            // Diagonally dominant keeps the condition number far below 1e6.
            let mut a = Matrix::zeros(n, n);
            for r in 0..n {
                for c in 0..n {
                    a[(r, c)] = rng.random_range(-1.0..1.0);
                }
                a[(r, r)] += n as f64 + 1.0;
            }
            let w: Vec<f64> = (0..n).map(|_| rng.random_range(-5.0..5.0)).collect();
            let b = a.mul_vec(&w);
            let s = solve(&LinearSystem::new(a, b).unwrap()).unwrap();
            let err = s.solution.iter().zip(&w).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
            proptest::prop_assert!(err < 1e-9);
        }
    }
}
