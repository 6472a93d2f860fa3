//! Dense `f64` vector and matrix arithmetic.
//!
//! This is the numeric substrate for the rest of the crate: embeddings,
//! model parameters and update vectors are all `Vec64`/`Mat64` values.
//! Everything is plain row-major `f64`, values are immutable once built,
//! and constructors reject non-finite entries.

use crate::error::{Error, Result};

/// Dense vector of finite 64-bit floats.
#[derive(Debug, Clone, PartialEq)]
pub struct Vec64 {
    data: Vec<f64>,
}

impl Vec64 {
    /// Builds a vector, rejecting NaN/Inf entries.
    pub fn new(data: Vec<f64>) -> Result<Self> {
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Degenerate {
                op: "Vec64::new",
                detail: format!("non-finite entry at index {i}"),
            });
        }
        Ok(Self { data })
    }

    pub fn zeros(len: usize) -> Self {
        Self {
            data: vec![0.0; len],
        }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    /// Dot product. Errors on length mismatch.
    pub fn dot(&self, other: &Vec64) -> Result<f64> {
        if self.len() != other.len() {
            return Err(Error::Dimension {
                op: "dot",
                left: self.len(),
                right: other.len(),
            });
        }
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a * b)
            .sum())
    }

    /// Euclidean norm, always >= 0.
    pub fn l2_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Cosine similarity in [-1, 1] (up to rounding).
    ///
    /// A zero-norm operand is an error rather than a silent 0: a zero
    /// embedding during training is a bug worth surfacing.
    pub fn cosine(&self, other: &Vec64) -> Result<f64> {
        let d = self.dot(other)?;
        let na = self.l2_norm();
        let nb = other.l2_norm();
        if na == 0.0 || nb == 0.0 {
            return Err(Error::Degenerate {
                op: "cosine",
                detail: "zero-norm operand".to_string(),
            });
        }
        Ok(d / (na * nb))
    }

    /// Returns `self + alpha * x`.
    pub fn axpy(&self, alpha: f64, x: &Vec64) -> Result<Vec64> {
        if self.len() != x.len() {
            return Err(Error::Dimension {
                op: "axpy",
                left: self.len(),
                right: x.len(),
            });
        }
        Ok(Vec64 {
            data: self
                .data
                .iter()
                .zip(&x.data)
                .map(|(y, xi)| y + alpha * xi)
                .collect(),
        })
    }
}

/// Dense row-major matrix of finite 64-bit floats.
///
/// The row-major flattening order is part of the contract: parameter
/// serialization and update vectors rely on it being stable.
#[derive(Debug, Clone, PartialEq)]
pub struct Mat64 {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Mat64 {
    /// Builds a matrix from row-major data of length `rows * cols`.
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Dimension {
                op: "Mat64::new",
                left: rows * cols,
                right: data.len(),
            });
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Degenerate {
                op: "Mat64::new",
                detail: format!("non-finite entry at flat index {i}"),
            });
        }
        Ok(Self { rows, cols, data })
    }

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
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    /// Row-major flat view.
    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    /// Matrix-vector product `y_r = sum_c M[r,c] x_c`.
    pub fn matvec(&self, x: &Vec64) -> Result<Vec64> {
        if self.cols != x.len() {
            return Err(Error::Dimension {
                op: "matvec",
                left: self.cols,
                right: x.len(),
            });
        }
        let xs = x.as_slice();
        let mut out = vec![0.0; self.rows];
        for (r, slot) in out.iter_mut().enumerate() {
            let row = &self.data[r * self.cols..(r + 1) * self.cols];
            *slot = row.iter().zip(xs).map(|(m, v)| m * v).sum();
        }
        Ok(Vec64 { data: out })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn v(data: &[f64]) -> Vec64 {
        Vec64::new(data.to_vec()).unwrap()
    }

    #[test]
    fn dot_hand_cases() {
        assert_eq!(v(&[1.0, 2.0, 3.0]).dot(&v(&[4.0, 5.0, 6.0])).unwrap(), 32.0);
        assert_eq!(v(&[0.0, 0.0]).dot(&v(&[3.5, -7.0])).unwrap(), 0.0);
        assert_eq!(v(&[1.0, 0.0]).dot(&v(&[1.0, 0.0])).unwrap(), 1.0);
    }

    #[test]
    fn dot_length_mismatch() {
        assert!(matches!(
            v(&[1.0]).dot(&v(&[1.0, 2.0])),
            Err(Error::Dimension { op: "dot", .. })
        ));
    }

    #[test]
    fn l2_norm_hand_cases() {
        assert_eq!(v(&[3.0, 4.0]).l2_norm(), 5.0);
        assert_eq!(v(&[0.0, 0.0, 0.0]).l2_norm(), 0.0);
        assert_eq!(v(&[1.0]).l2_norm(), 1.0);
    }

    #[test]
    fn cosine_hand_cases() {
        let a = v(&[0.3, -1.7, 2.2]);
        assert!((a.cosine(&a).unwrap() - 1.0).abs() < 1e-12);
        let e1 = v(&[1.0, 0.0]);
        let e2 = v(&[0.0, 1.0]);
        assert_eq!(e1.cosine(&e2).unwrap(), 0.0);
        let c = v(&[1.0, 1.0]).cosine(&v(&[1.0, 0.0])).unwrap();
        assert!((c - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-12);
    }

    #[test]
    fn cosine_zero_norm_is_error() {
        let z = Vec64::zeros(3);
        assert!(matches!(
            z.cosine(&v(&[1.0, 0.0, 0.0])),
            Err(Error::Degenerate { op: "cosine", .. })
        ));
    }

    #[test]
    fn matvec_hand_cases() {
        let m = Mat64::new(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let y = m.matvec(&v(&[1.0, 1.0])).unwrap();
        assert_eq!(y.as_slice(), &[3.0, 7.0]);

        let z = Mat64::zeros(2, 3).matvec(&v(&[1.0, -2.0, 5.0])).unwrap();
        assert_eq!(z.as_slice(), &[0.0, 0.0]);
    }

    #[test]
    fn axpy_hand_cases() {
        let x = v(&[1.0, -2.0]);
        let y = v(&[0.5, 0.5]);
        assert_eq!(y.axpy(0.0, &x).unwrap(), y);
        assert_eq!(Vec64::zeros(2).axpy(1.0, &x).unwrap(), x);
        let zero = x.axpy(-1.0, &x).unwrap();
        assert_eq!(zero.as_slice(), &[0.0, 0.0]);
    }

    #[test]
    fn constructors_reject_non_finite() {
        assert!(Vec64::new(vec![1.0, f64::NAN]).is_err());
        assert!(Mat64::new(1, 2, vec![f64::INFINITY, 0.0]).is_err());
        assert!(Mat64::new(2, 2, vec![0.0; 3]).is_err());
    }

    fn finite_vec(len: usize) -> impl Strategy<Value = Vec<f64>> {
        proptest::collection::vec(-1e3..1e3f64, len)
    }

    proptest! {
        #[test]
        fn cosine_scale_invariant(a in finite_vec(6), b in finite_vec(6), c in 1e-3..1e3f64) {
            let a = Vec64::new(a).unwrap();
            let b = Vec64::new(b).unwrap();
            if a.l2_norm() > 1e-9 && b.l2_norm() > 1e-9 {
                let scaled = Vec64::new(a.as_slice().iter().map(|x| x * c).collect()).unwrap();
                let lhs = scaled.cosine(&b).unwrap();
                let rhs = a.cosine(&b).unwrap();
                prop_assert!((lhs - rhs).abs() < 1e-12);
            }
        }

        #[test]
        fn cosine_symmetric(a in finite_vec(5), b in finite_vec(5)) {
            let a = Vec64::new(a).unwrap();
            let b = Vec64::new(b).unwrap();
            if a.l2_norm() > 0.0 && b.l2_norm() > 0.0 {
                prop_assert_eq!(a.cosine(&b).unwrap(), b.cosine(&a).unwrap());
            }
        }

        #[test]
        fn matvec_identity_is_identity(x in finite_vec(8)) {
            let x = Vec64::new(x).unwrap();
            let y = Mat64::identity(8).matvec(&x).unwrap();
            // bitwise
            for (a, b) in x.as_slice().iter().zip(y.as_slice()) {
                prop_assert_eq!(a.to_bits(), b.to_bits());
            }
        }

        #[test]
        fn dot_distributes(a in finite_vec(6), b in finite_vec(6), c in finite_vec(6)) {
            let av = Vec64::new(a).unwrap();
            let bv = Vec64::new(b.clone()).unwrap();
            let cv = Vec64::new(c.clone()).unwrap();
            let sum = Vec64::new(b.iter().zip(&c).map(|(x, y)| x + y).collect()).unwrap();
            let lhs = av.dot(&sum).unwrap();
            let rhs = av.dot(&bv).unwrap() + av.dot(&cv).unwrap();
            let scale = lhs.abs().max(rhs.abs()).max(1.0);
            prop_assert!((lhs - rhs).abs() / scale < 1e-10);
        }
    }
}
