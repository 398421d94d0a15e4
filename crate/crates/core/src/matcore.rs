//! Dense matrices of size at most 4 over the reals or complexes.
//!
//! Real matrices are stored as complex matrices with zero imaginary parts so
//! that every formula has a single code path.

use std::fmt;
use std::ops::{Index, IndexMut, Mul};

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type C64 = Complex64;

pub const MAX_N: usize = 4;

/// Number of attempts made by [`random_group_element`] before giving up.
pub const RETRY_BUDGET: usize = 1000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Field {
    Real,
    Complex,
}

impl Field {
    /// Real dimension of one scalar coordinate.
    pub fn real_dim(self) -> usize {
        match self {
            Field::Real => 1,
            Field::Complex => 2,
        }
    }

    /// Exponent `c` with `|det|^c` the Jacobian of scalar multiplication.
    pub fn c(self) -> f64 {
        self.real_dim() as f64
    }
}

impl fmt::Display for Field {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Field::Real => write!(f, "R"),
            Field::Complex => write!(f, "C"),
        }
    }
}

/// Square matrix with `n <= 4`, stored row-major in a fixed buffer.
#[derive(Clone, Copy, PartialEq)]
pub struct Mat {
    n: usize,
    a: [C64; MAX_N * MAX_N],
}

impl fmt::Debug for Mat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let rows: Vec<Vec<C64>> = (0..self.n)
            .map(|i| (0..self.n).map(|j| self[(i, j)]).collect())
            .collect();
        f.debug_struct("Mat").field("rows", &rows).finish()
    }
}

impl Index<(usize, usize)> for Mat {
    type Output = C64;
    fn index(&self, (i, j): (usize, usize)) -> &C64 {
        debug_assert!(i < self.n && j < self.n);
        &self.a[i * MAX_N + j]
    }
}

impl IndexMut<(usize, usize)> for Mat {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut C64 {
        debug_assert!(i < self.n && j < self.n);
        &mut self.a[i * MAX_N + j]
    }
}

impl Mul for Mat {
    type Output = Mat;
    fn mul(self, rhs: Mat) -> Mat {
        &self * &rhs
    }
}

impl Mul for &Mat {
    type Output = Mat;
    fn mul(self, rhs: &Mat) -> Mat {
        assert_eq!(self.n, rhs.n, "matrix size mismatch");
        Mat::from_fn(self.n, |i, j| {
            (0..self.n).map(|l| self[(i, l)] * rhs[(l, j)]).sum()
        })
    }
}

impl Mat {
    pub fn zeros(n: usize) -> Mat {
        assert!((1..=MAX_N).contains(&n), "matrix size {n} unsupported");
        Mat {
            n,
            a: [C64::new(0.0, 0.0); MAX_N * MAX_N],
        }
    }

    pub fn identity(n: usize) -> Mat {
        Mat::from_fn(n, |i, j| if i == j { C64::new(1.0, 0.0) } else { C64::new(0.0, 0.0) })
    }

    pub fn from_fn(n: usize, mut f: impl FnMut(usize, usize) -> C64) -> Mat {
        let mut m = Mat::zeros(n);
        for i in 0..n {
            for j in 0..n {
                m[(i, j)] = f(i, j);
            }
        }
        m
    }

    pub fn from_rows(rows: &[Vec<C64>]) -> Result<Mat> {
        let n = rows.len();
        if !(1..=MAX_N).contains(&n) || rows.iter().any(|r| r.len() != n) {
            return Err(Error::DimensionMismatch(format!(
                "expected a square matrix of size 1..=4, got {} rows",
                n
            )));
        }
        Ok(Mat::from_fn(n, |i, j| rows[i][j]))
    }

    pub fn from_real_rows(rows: &[&[f64]]) -> Result<Mat> {
        let rows: Vec<Vec<C64>> = rows
            .iter()
            .map(|r| r.iter().map(|&x| C64::new(x, 0.0)).collect())
            .collect();
        Mat::from_rows(&rows)
    }

    pub fn diag(d: &[C64]) -> Mat {
        Mat::from_fn(d.len(), |i, j| if i == j { d[i] } else { C64::new(0.0, 0.0) })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn rows(&self) -> Vec<Vec<C64>> {
        (0..self.n)
            .map(|i| (0..self.n).map(|j| self[(i, j)]).collect())
            .collect()
    }

    pub fn max_norm(&self) -> f64 {
        self.a[..].iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    pub fn max_abs_diff(&self, other: &Mat) -> f64 {
        assert_eq!(self.n, other.n);
        let mut d: f64 = 0.0;
        for i in 0..self.n {
            for j in 0..self.n {
                d = d.max((self[(i, j)] - other[(i, j)]).norm());
            }
        }
        d
    }

    pub fn is_real(&self) -> bool {
        self.a.iter().all(|z| z.im == 0.0)
    }

    pub fn scale(&self, c: C64) -> Mat {
        Mat::from_fn(self.n, |i, j| self[(i, j)] * c)
    }

    pub fn transpose(&self) -> Mat {
        Mat::from_fn(self.n, |i, j| self[(j, i)])
    }

    /// Determinant by cofactor expansion.
    pub fn det(&self) -> C64 {
        let idx: Vec<usize> = (0..self.n).collect();
        self.det_of(&idx, &idx)
    }

    /// Determinant of the submatrix on `rows` x `cols` (0-based, in the given order).
    pub fn minor(&self, rows: &[usize], cols: &[usize]) -> Result<C64> {
        if rows.len() != cols.len() || rows.is_empty() {
            return Err(Error::InvalidIndex(format!(
                "row/column lists of lengths {} and {}",
                rows.len(),
                cols.len()
            )));
        }
        if let Some(&bad) = rows.iter().chain(cols).find(|&&i| i >= self.n) {
            return Err(Error::InvalidIndex(format!("index {bad} for size {}", self.n)));
        }
        Ok(self.det_of(rows, cols))
    }

    /// Unchecked minor; indices must be valid.
    pub(crate) fn det_of(&self, rows: &[usize], cols: &[usize]) -> C64 {
        match rows.len() {
            0 => C64::new(1.0, 0.0),
            1 => self[(rows[0], cols[0])],
            2 => {
                self[(rows[0], cols[0])] * self[(rows[1], cols[1])]
                    - self[(rows[0], cols[1])] * self[(rows[1], cols[0])]
            }
            k => {
                let mut sum = C64::new(0.0, 0.0);
                let mut rest = [0usize; MAX_N];
                for j in 0..k {
                    let mut t = 0;
                    for (l, &c) in cols.iter().enumerate() {
                        if l != j {
                            rest[t] = c;
                            t += 1;
                        }
                    }
                    let term = self[(rows[0], cols[j])] * self.det_of(&rows[1..], &rest[..k - 1]);
                    if j % 2 == 0 {
                        sum += term;
                    } else {
                        sum -= term;
                    }
                }
                sum
            }
        }
    }

    /// Inverse through the adjugate; `None` when the determinant vanishes.
    pub fn inverse(&self) -> Option<Mat> {
        let d = self.det();
        if d.norm() == 0.0 {
            return None;
        }
        let n = self.n;
        let mut inv = Mat::zeros(n);
        let mut rr = [0usize; MAX_N];
        let mut cc = [0usize; MAX_N];
        for i in 0..n {
            for j in 0..n {
                let mut t = 0;
                for r in (0..n).filter(|&r| r != j) {
                    rr[t] = r;
                    t += 1;
                }
                t = 0;
                for c in (0..n).filter(|&c| c != i) {
                    cc[t] = c;
                    t += 1;
                }
                let cof = self.det_of(&rr[..n - 1], &cc[..n - 1]);
                let sign = if (i + j) % 2 == 0 { 1.0 } else { -1.0 };
                inv[(i, j)] = cof * sign / d;
            }
        }
        Some(inv)
    }

    pub fn to_nalgebra(&self) -> DMatrix<C64> {
        DMatrix::from_fn(self.n, self.n, |i, j| self[(i, j)])
    }

    /// Ratio of extreme singular values.
    pub fn condition_number(&self) -> f64 {
        let sv = self.to_nalgebra().singular_values();
        let max = sv.iter().cloned().fold(0.0, f64::max);
        let min = sv.iter().cloned().fold(f64::INFINITY, f64::min);
        if min == 0.0 {
            f64::INFINITY
        } else {
            max / min
        }
    }
}

/// An element of SL_n over the given field.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GroupElement {
    mat: Mat,
    field: Field,
}

impl GroupElement {
    /// Checks `|det - 1| <= 1e-10 * max_norm^n` and, for the real field, zero imaginary parts.
    pub fn new(mat: Mat, field: Field) -> Result<GroupElement> {
        if !(2..=MAX_N).contains(&mat.n()) {
            return Err(Error::DimensionMismatch(format!("group size {}", mat.n())));
        }
        if field == Field::Real && !mat.is_real() {
            return Err(Error::InvalidParams("real group element with complex entries".into()));
        }
        let scale = mat.max_norm().max(1.0).powi(mat.n() as i32);
        let d = mat.det();
        if (d - 1.0).norm() > 1e-10 * scale {
            return Err(Error::InvalidParams(format!("det = {d}, expected 1")));
        }
        Ok(GroupElement { mat, field })
    }

    pub fn identity(n: usize, field: Field) -> GroupElement {
        GroupElement {
            mat: Mat::identity(n),
            field,
        }
    }

    pub fn mat(&self) -> &Mat {
        &self.mat
    }

    pub fn field(&self) -> Field {
        self.field
    }

    pub fn n(&self) -> usize {
        self.mat.n()
    }

    pub fn inverse(&self) -> GroupElement {
        let inv = self.mat.inverse().expect("unit determinant");
        let inv = if self.field == Field::Real {
            Mat::from_fn(inv.n(), |i, j| C64::new(inv[(i, j)].re, 0.0))
        } else {
            inv
        };
        GroupElement {
            mat: inv,
            field: self.field,
        }
    }

    /// The same matrix regarded over the complexes.
    pub fn as_complex(&self) -> GroupElement {
        GroupElement {
            mat: self.mat,
            field: Field::Complex,
        }
    }

    pub fn compose(&self, other: &GroupElement) -> GroupElement {
        assert_eq!(self.field, other.field);
        GroupElement {
            mat: &self.mat * &other.mat,
            field: self.field,
        }
    }
}

/// SplitMix64 mix of a master seed with an index; used for all derived seeds.
pub fn derive_seed(master: u64, index: u64) -> u64 {
    let mut z = master ^ index.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(0xD1B5_4A32_D192_ED03);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seeded generator for a derived stream.
pub fn rng_for(master: u64, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(master, index))
}

/// Draws one entry: N(0,1) for the reals, N(0,1/2) real and imaginary parts for the complexes.
pub fn sample_scalar<R: Rng + ?Sized>(rng: &mut R, field: Field) -> C64 {
    match field {
        Field::Real => C64::new(rng.sample(StandardNormal), 0.0),
        Field::Complex => {
            let s = std::f64::consts::FRAC_1_SQRT_2;
            let re: f64 = rng.sample(StandardNormal);
            let im: f64 = rng.sample(StandardNormal);
            C64::new(s * re, s * im)
        }
    }
}

/// Scales a matrix to unit determinant; real matrices with negative determinant
/// get their first row negated first.  Complex roots use the principal branch.
pub fn normalize_det(mut m: Mat, field: Field) -> Option<Mat> {
    let n = m.n();
    let mut d = m.det();
    if d.norm() < 1e-300 || !d.norm().is_finite() {
        return None;
    }
    match field {
        Field::Real => {
            if d.re < 0.0 {
                for j in 0..n {
                    m[(0, j)] = -m[(0, j)];
                }
                d = -d;
            }
            let r = d.re.powf(1.0 / n as f64);
            Some(m.scale(C64::new(1.0 / r, 0.0)))
        }
        Field::Complex => {
            let r = d.powf(1.0 / n as f64);
            Some(m.scale(r.inv()))
        }
    }
}

/// Samples a unit-determinant matrix with condition number at most `conditioning_bound`.
pub fn sample_group_element<R: Rng + ?Sized>(
    rng: &mut R,
    n: usize,
    field: Field,
    conditioning_bound: f64,
) -> Result<GroupElement> {
    if !(2..=MAX_N).contains(&n) {
        return Err(Error::DimensionMismatch(format!("group size {n}")));
    }
    if !(conditioning_bound > 1.0) {
        return Err(Error::InvalidParams("conditioning bound must exceed 1".into()));
    }
    for _ in 0..RETRY_BUDGET {
        let raw = Mat::from_fn(n, |_, _| sample_scalar(rng, field));
        let Some(m) = normalize_det(raw, field) else {
            continue;
        };
        if m.condition_number() <= conditioning_bound {
            return GroupElement::new(m, field);
        }
    }
    Err(Error::RejectionExhausted(RETRY_BUDGET))
}

/// Deterministic per `seed`: same arguments give bit-identical matrices.
pub fn random_group_element(
    n: usize,
    field: Field,
    seed: u64,
    conditioning_bound: f64,
) -> Result<GroupElement> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    sample_group_element(&mut rng, n, field, conditioning_bound)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64) -> C64 {
        C64::new(re, 0.0)
    }

    #[test]
    fn det_of_identity_and_rotation() {
        assert_eq!(Mat::identity(3).det(), c(1.0));
        let r = Mat::from_real_rows(&[&[0.0, 1.0], &[-1.0, 0.0]]).unwrap();
        assert_eq!(r.det(), c(1.0));
    }

    #[test]
    fn minor_of_diagonal() {
        let g = Mat::diag(&[c(2.0), c(0.25), c(2.0)]);
        assert_eq!(g.minor(&[1, 2], &[1, 2]).unwrap(), c(0.5));
        assert_eq!(Mat::identity(4).minor(&[0, 1], &[0, 1]).unwrap(), c(1.0));
    }

    #[test]
    fn minor_rejects_bad_indices() {
        let g = Mat::identity(3);
        assert!(matches!(g.minor(&[0, 3], &[0, 1]), Err(Error::InvalidIndex(_))));
        assert!(matches!(g.minor(&[0], &[0, 1]), Err(Error::InvalidIndex(_))));
    }

    #[test]
    fn inverse_round_trip() {
        let g = random_group_element(4, Field::Complex, 3, 1e3).unwrap();
        let p = g.mat() * g.inverse().mat();
        assert!(p.max_abs_diff(&Mat::identity(4)) < 1e-12);
    }

    #[test]
    fn random_element_is_deterministic_and_normalized() {
        let a = random_group_element(3, Field::Complex, 7, 1e3).unwrap();
        let b = random_group_element(3, Field::Complex, 7, 1e3).unwrap();
        assert_eq!(a, b);
        assert!((a.mat().det() - 1.0).norm() <= 1e-10);
        let r = random_group_element(4, Field::Real, 11, 1e3).unwrap();
        assert!(r.mat().is_real());
        assert!((r.mat().det() - 1.0).norm() <= 1e-10);
    }

    #[test]
    fn tight_bound_exhausts() {
        assert_eq!(
            random_group_element(4, Field::Real, 1, 1.0 + 1e-9),
            Err(Error::RejectionExhausted(RETRY_BUDGET))
        );
    }
}
