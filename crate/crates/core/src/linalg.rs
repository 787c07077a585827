//! Small dense and banded solvers.

use crate::error::{Error, Result};

/// Solves `a x = b` for a square row-major `a` by Gaussian elimination with
/// partial pivoting.
pub fn solve_dense(n: usize, a: &[f64], b: &[f64]) -> Result<Vec<f64>> {
    let mut m = a.to_vec();
    let mut x = b.to_vec();
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&i, &j| m[i * n + col].abs().total_cmp(&m[j * n + col].abs()))
            .unwrap();
        if m[pivot * n + col].abs() < 1e-300 {
            return Err(Error::Numeric("singular linear system".into()));
        }
        if pivot != col {
            for k in 0..n {
                m.swap(col * n + k, pivot * n + k);
            }
            x.swap(col, pivot);
        }
        let d = m[col * n + col];
        for row in col + 1..n {
            let f = m[row * n + col] / d;
            if f == 0.0 {
                continue;
            }
            for k in col..n {
                m[row * n + k] -= f * m[col * n + k];
            }
            x[row] -= f * x[col];
        }
    }
    for col in (0..n).rev() {
        let mut s = x[col];
        for k in col + 1..n {
            s -= m[col * n + k] * x[k];
        }
        x[col] = s / m[col * n + col];
    }
    Ok(x)
}

/// Symmetric positive definite pentadiagonal system, stored by diagonals:
/// `d0[i] = A[i][i]`, `d1[i] = A[i][i+1]`, `d2[i] = A[i][i+2]`.
pub struct Pentadiagonal {
    pub d0: Vec<f64>,
    pub d1: Vec<f64>,
    pub d2: Vec<f64>,
}

impl Pentadiagonal {
    /// Banded Cholesky solve with two rounds of iterative refinement, O(n).
    pub fn solve(&self, b: &[f64]) -> Result<Vec<f64>> {
        let factor = self.factor()?;
        let mut x = factor.solve(b);
        for _ in 0..2 {
            let r: Vec<f64> = self.mul(&x).iter().zip(b).map(|(ax, bi)| bi - ax).collect();
            let dx = factor.solve(&r);
            x.iter_mut().zip(&dx).for_each(|(xi, d)| *xi += d);
        }
        Ok(x)
    }

    pub fn mul(&self, x: &[f64]) -> Vec<f64> {
        let n = self.d0.len();
        (0..n)
            .map(|i| {
                let mut s = self.d0[i] * x[i];
                if i + 1 < n {
                    s += self.d1[i] * x[i + 1];
                }
                if i >= 1 {
                    s += self.d1[i - 1] * x[i - 1];
                }
                if i + 2 < n {
                    s += self.d2[i] * x[i + 2];
                }
                if i >= 2 {
                    s += self.d2[i - 2] * x[i - 2];
                }
                s
            })
            .collect()
    }

    fn factor(&self) -> Result<BandCholesky> {
        let n = self.d0.len();
        // l0: diagonal, l1[i] = L[i][i-1], l2[i] = L[i][i-2]
        let mut l0 = vec![0.0; n];
        let mut l1 = vec![0.0; n];
        let mut l2 = vec![0.0; n];
        for i in 0..n {
            if i >= 2 {
                l2[i] = self.d2[i - 2] / l0[i - 2];
            }
            if i >= 1 {
                let mut s = self.d1[i - 1];
                if i >= 2 {
                    s -= l2[i] * l1[i - 1];
                }
                l1[i] = s / l0[i - 1];
            }
            let s = self.d0[i] - l1[i] * l1[i] - l2[i] * l2[i];
            if s <= 0.0 || !s.is_finite() {
                return Err(Error::Numeric("banded system is not positive definite".into()));
            }
            l0[i] = s.sqrt();
        }
        Ok(BandCholesky { l0, l1, l2 })
    }
}

struct BandCholesky {
    l0: Vec<f64>,
    l1: Vec<f64>,
    l2: Vec<f64>,
}

impl BandCholesky {
    fn solve(&self, b: &[f64]) -> Vec<f64> {
        let (l0, l1, l2) = (&self.l0, &self.l1, &self.l2);
        let n = l0.len();
        let mut y = vec![0.0; n];
        for i in 0..n {
            let mut s = b[i];
            if i >= 1 {
                s -= l1[i] * y[i - 1];
            }
            if i >= 2 {
                s -= l2[i] * y[i - 2];
            }
            y[i] = s / l0[i];
        }
        let mut x = vec![0.0; n];
        for i in (0..n).rev() {
            let mut s = y[i];
            if i + 1 < n {
                s -= l1[i + 1] * x[i + 1];
            }
            if i + 2 < n {
                s -= l2[i + 2] * x[i + 2];
            }
            x[i] = s / l0[i];
        }
        x
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dense_solve_recovers_known_solution() {
        let a = [4.0, 1.0, 0.0, 1.0, 3.0, 1.0, 0.0, 1.0, 2.0];
        let x = [1.0, -2.0, 0.5];
        let b: Vec<f64> = (0..3).map(|i| (0..3).map(|j| a[i * 3 + j] * x[j]).sum()).collect();
        let got = solve_dense(3, &a, &b).unwrap();
        for (g, e) in got.iter().zip(x) {
            assert!((g - e).abs() < 1e-12);
        }
    }

    #[test]
    fn banded_matches_dense() {
        let n = 7;
        let band = Pentadiagonal {
            d0: (0..n).map(|i| 6.0 + i as f64).collect(),
            d1: (0..n - 1).map(|i| -1.0 - 0.1 * i as f64).collect(),
            d2: (0..n - 2).map(|i| 0.5 + 0.05 * i as f64).collect(),
        };
        let mut dense = vec![0.0; n * n];
        for i in 0..n {
            dense[i * n + i] = band.d0[i];
            if i + 1 < n {
                dense[i * n + i + 1] = band.d1[i];
                dense[(i + 1) * n + i] = band.d1[i];
            }
            if i + 2 < n {
                dense[i * n + i + 2] = band.d2[i];
                dense[(i + 2) * n + i] = band.d2[i];
            }
        }
        let b: Vec<f64> = (0..n).map(|i| (i as f64).sin()).collect();
        let x1 = band.solve(&b).unwrap();
        let x2 = solve_dense(n, &dense, &b).unwrap();
        for (a, b) in x1.iter().zip(&x2) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}
