//! Dense symmetric positive-definite algebra for the small systems that
//! appear in parsimonious, restricted and full least-squares fits.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Relative symmetry tolerance accepted by [`SpdMatrix::new`].
const SYMMETRY_TOL: f64 = 1e-12;
/// Cholesky pivots must exceed `dim * PIVOT_TOL * max_diag`.
const PIVOT_TOL: f64 = 1e-14;

/// Symmetric matrix stored row-major. Positive definiteness is checked when
/// it is factored, not on construction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpdMatrix {
    dim: usize,
    entries: Vec<f64>,
}

impl SpdMatrix {
    pub fn new(dim: usize, entries: Vec<f64>) -> Result<Self> {
        if dim == 0 || entries.len() != dim * dim {
            return Err(Error::DimensionMismatch(format!(
                "expected {dim}x{dim} entries, got {}",
                entries.len()
            )));
        }
        if entries.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("matrix entries".into()));
        }
        let scale = entries.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for r in 0..dim {
            for c in (r + 1)..dim {
                let (a, b) = (entries[r * dim + c], entries[c * dim + r]);
                if (a - b).abs() > SYMMETRY_TOL * scale.max(f64::MIN_POSITIVE) {
                    return Err(Error::NotSymmetric { row: r, col: c });
                }
            }
        }
        Ok(Self { dim, entries })
    }

    pub fn identity(dim: usize) -> Self {
        let mut entries = vec![0.0; dim * dim];
        for i in 0..dim {
            entries[i * dim + i] = 1.0;
        }
        Self { dim, entries }
    }

    /// Builds from a closure over the upper triangle, mirroring it.
    pub fn from_fn(dim: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut entries = vec![0.0; dim * dim];
        for r in 0..dim {
            for c in r..dim {
                let v = f(r, c);
                entries[r * dim + c] = v;
                entries[c * dim + r] = v;
            }
        }
        Self { dim, entries }
    }

    /// Gram matrix `X'X` of the given columns.
    pub fn gram(columns: &[&[f64]]) -> Self {
        Self::from_fn(columns.len(), |r, c| dot(columns[r], columns[c]))
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.entries[row * self.dim + col]
    }

    pub fn entries(&self) -> &[f64] {
        &self.entries
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.dim).map(|i| self.get(i, i)).collect()
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            dim: self.dim,
            entries: self.entries.iter().map(|v| v * factor).collect(),
        }
    }

    /// Sub-matrix on the given index set (principal minor).
    pub fn principal(&self, idx: &[usize]) -> Self {
        Self::from_fn(idx.len(), |r, c| self.get(idx[r], idx[c]))
    }

    pub fn mul_vec(&self, v: &[f64]) -> Vec<f64> {
        debug_assert_eq!(v.len(), self.dim);
        self.entries.chunks_exact(self.dim).map(|row| dot(row, v)).collect()
    }

    /// Quadratic form `v' A v`.
    pub fn quad_form(&self, v: &[f64]) -> f64 {
        dot(v, &self.mul_vec(v))
    }

    pub fn norm_inf(&self) -> f64 {
        self.entries
            .chunks_exact(self.dim)
            .map(|row| row.iter().map(|v| v.abs()).sum::<f64>())
            .fold(0.0, f64::max)
    }

    pub fn cholesky(&self) -> Result<Cholesky> {
        Cholesky::factor(self)
    }

    /// `A B A` for symmetric `A`, `B` (the sandwich product).
    pub fn sandwich(&self, meat: &SpdMatrix) -> SpdMatrix {
        let d = self.dim;
        let mut tmp = vec![0.0; d * d];
        for r in 0..d {
            for c in 0..d {
                tmp[r * d + c] = (0..d).map(|k| self.get(r, k) * meat.get(k, c)).sum();
            }
        }
        SpdMatrix::from_fn(d, |r, c| (0..d).map(|k| tmp[r * d + k] * self.get(k, c)).sum())
    }
}

/// Lower-triangular Cholesky factor `A = L L'`.
#[derive(Debug, Clone)]
pub struct Cholesky {
    dim: usize,
    lower: Vec<f64>,
}

impl Cholesky {
    pub fn factor(a: &SpdMatrix) -> Result<Self> {
        let n = a.dim;
        let max_diag = (0..n).map(|i| a.get(i, i)).fold(0.0f64, f64::max);
        let threshold = n as f64 * PIVOT_TOL * max_diag;
        let mut l = vec![0.0; n * n];
        for j in 0..n {
            let mut pivot = a.get(j, j);
            for k in 0..j {
                pivot -= l[j * n + k] * l[j * n + k];
            }
            if pivot.is_nan() || pivot <= threshold || max_diag <= 0.0 {
                return Err(Error::NonPositiveDefinite { pivot: j, value: pivot });
            }
            let ljj = pivot.sqrt();
            l[j * n + j] = ljj;
            for i in (j + 1)..n {
                let mut s = a.get(i, j);
                for k in 0..j {
                    s -= l[i * n + k] * l[j * n + k];
                }
                l[i * n + j] = s / ljj;
            }
        }
        Ok(Self { dim: n, lower: l })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let mut x = b.to_vec();
        self.solve_in_place(&mut x);
        x
    }

    pub fn solve_in_place(&self, x: &mut [f64]) {
        let n = self.dim;
        assert_eq!(x.len(), n, "right-hand side length");
        let l = &self.lower;
        for i in 0..n {
            let mut s = x[i];
            for k in 0..i {
                s -= l[i * n + k] * x[k];
            }
            x[i] = s / l[i * n + i];
        }
        for i in (0..n).rev() {
            let mut s = x[i];
            for k in (i + 1)..n {
                s -= l[k * n + i] * x[k];
            }
            x[i] = s / l[i * n + i];
        }
    }

    pub fn inverse(&self) -> SpdMatrix {
        let n = self.dim;
        let mut cols = Vec::with_capacity(n);
        for j in 0..n {
            let mut e = vec![0.0; n];
            e[j] = 1.0;
            self.solve_in_place(&mut e);
            cols.push(e);
        }
        // symmetrize away rounding asymmetry
        SpdMatrix::from_fn(n, |r, c| 0.5 * (cols[c][r] + cols[r][c]))
    }
}

/// Solves `A x = b` for symmetric positive-definite `A`.
pub fn solve_spd(a: &SpdMatrix, b: &[f64]) -> Result<Vec<f64>> {
    if a.dim() != b.len() {
        return Err(Error::DimensionMismatch(format!(
            "matrix is {0}x{0} but right-hand side has {1} entries",
            a.dim(),
            b.len()
        )));
    }
    Ok(a.cholesky()?.solve(b))
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn identity_solve() {
        let x = solve_spd(&SpdMatrix::identity(3), &[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(x, vec![1.0, 2.0, 3.0]);
    }

    #[test]
    fn two_by_two_matches_cramer() {
        let a = SpdMatrix::new(2, vec![4.0, 2.0, 2.0, 3.0]).unwrap();
        let b = [2.0, 1.0];
        // Cramer's rule, expanded by hand
        let det = 4.0 * 3.0 - 2.0 * 2.0;
        let x0 = (b[0] * 3.0 - 2.0 * b[1]) / det;
        let x1 = (4.0 * b[1] - 2.0 * b[0]) / det;
        let x = solve_spd(&a, &b).unwrap();
        assert!((x[0] - x0).abs() < 1e-15 && (x[0] - 0.5).abs() < 1e-15);
        assert!((x[1] - x1).abs() < 1e-15 && x[1].abs() < 1e-15);
    }

    #[test]
    fn rank_one_is_rejected() {
        let a = SpdMatrix::new(2, vec![1.0, 1.0, 1.0, 1.0]).unwrap();
        assert!(matches!(
            solve_spd(&a, &[1.0, 1.0]),
            Err(Error::NonPositiveDefinite { .. })
        ));
    }

    #[test]
    fn asymmetric_input_is_rejected() {
        assert!(matches!(
            SpdMatrix::new(2, vec![1.0, 0.5, 0.4, 1.0]),
            Err(Error::NotSymmetric { .. })
        ));
    }

    #[test]
    fn dimension_mismatch() {
        assert!(solve_spd(&SpdMatrix::identity(2), &[1.0]).is_err());
    }

    #[test]
    fn inverse_times_matrix_is_identity() {
        let a = SpdMatrix::new(3, vec![4.0, 1.0, 0.5, 1.0, 3.0, 0.2, 0.5, 0.2, 2.0]).unwrap();
        let inv = a.cholesky().unwrap().inverse();
        for r in 0..3 {
            for c in 0..3 {
                let v: f64 = (0..3).map(|k| a.get(r, k) * inv.get(k, c)).sum();
                assert!((v - if r == c { 1.0 } else { 0.0 }).abs() < 1e-14);
            }
        }
    }

    fn random_pd(dim: usize, seed: &[f64]) -> SpdMatrix {
        // M'M + I with M filled from the seed values
        let m = |r: usize, c: usize| seed[(r * dim + c) % seed.len()] * ((r + 2 * c) as f64 * 0.37).sin();
        SpdMatrix::from_fn(dim, |r, c| {
            (0..dim).map(|k| m(k, r) * m(k, c)).sum::<f64>() + if r == c { 1.0 } else { 0.0 }
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]
        #[test]
        fn residual_bound_holds(
            dim in 1usize..=50,
            seed in prop::collection::vec(-3.0f64..3.0, 1..64),
            rhs in prop::collection::vec(-10.0f64..10.0, 50),
        ) {
            let a = random_pd(dim, &seed);
            let b = &rhs[..dim];
            let x = solve_spd(&a, b).unwrap();
            let ax = a.mul_vec(&x);
            let resid = ax.iter().zip(b).map(|(u, v)| (u - v).abs()).fold(0.0, f64::max);
            let xinf = x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            let binf = b.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            prop_assert!(resid <= 1e-10 * (a.norm_inf() * xinf + binf));
        }
    }
}
