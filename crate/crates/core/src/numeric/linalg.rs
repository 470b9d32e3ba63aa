use super::Matrix;
use crate::error::{Error, Result};

/// Lower-triangular Cholesky factor `L` with `A = L·Lᵀ`.
#[derive(Debug, Clone)]
pub struct Cholesky {
    lower: Matrix,
}

impl Cholesky {
    /// Factors a symmetric positive-definite matrix. Only the lower triangle is read,
    /// but asymmetric input is rejected.
    pub fn factor(a: &Matrix) -> Result<Self> {
        let (n, m) = a.shape();
        if n != m {
            return Err(Error::Dimension(format!("cholesky of a {n}x{m} matrix")));
        }
        for i in 0..n {
            for j in 0..i {
                let (x, y) = (a.get(i, j), a.get(j, i));
                if (x - y).abs() > 1e-10 * (1.0 + x.abs().max(y.abs())) {
                    return Err(Error::Factorization { pivot: i });
                }
            }
        }
        let mut l = Matrix::zeros(n, n);
        for j in 0..n {
            let mut diag = a.get(j, j);
            for k in 0..j {
                diag -= l.get(j, k) * l.get(j, k);
            }
            if !diag.is_finite() || diag <= 0.0 {
                return Err(Error::Factorization { pivot: j });
            }
            let ljj = diag.sqrt();
            l.set(j, j, ljj);
            for i in (j + 1)..n {
                let mut s = a.get(i, j);
                for k in 0..j {
                    s -= l.get(i, k) * l.get(j, k);
                }
                l.set(i, j, s / ljj);
            }
        }
        Ok(Self { lower: l })
    }

    pub fn dim(&self) -> usize {
        self.lower.rows()
    }

    pub fn lower(&self) -> &Matrix {
        &self.lower
    }

    /// Solves `L·y = b` by forward substitution.
    pub fn forward_solve(&self, b: &[f64]) -> Result<Vec<f64>> {
        let n = self.dim();
        if b.len() != n {
            return Err(Error::Dimension(format!(
                "rhs of length {} for a {n}x{n} factor",
                b.len()
            )));
        }
        let mut y = vec![0.0; n];
        for i in 0..n {
            let row = self.lower.row(i);
            let s: f64 = row[..i].iter().zip(&y[..i]).map(|(l, v)| l * v).sum();
            y[i] = (b[i] - s) / row[i];
        }
        Ok(y)
    }

    /// Solves `A·x = b`.
    pub fn solve(&self, b: &[f64]) -> Result<Vec<f64>> {
        let n = self.dim();
        let mut x = self.forward_solve(b)?;
        for i in (0..n).rev() {
            let s: f64 = x[i] - ((i + 1)..n).map(|k| self.lower.get(k, i) * x[k]).sum::<f64>();
            x[i] = s / self.lower.get(i, i);
        }
        Ok(x)
    }

    /// `sqrt(vᵀ A⁻¹ v)` as the norm of `L⁻¹ v`.
    pub fn inverse_norm(&self, v: &[f64]) -> Result<f64> {
        let y = self.forward_solve(v)?;
        Ok(y.iter().map(|t| t * t).sum::<f64>().sqrt())
    }
}

/// `sqrt((x−mu)ᵀ cov⁻¹ (x−mu))` through a Cholesky solve.
pub fn mahalanobis_distance(x: &[f64], mu: &[f64], cov: &Matrix) -> Result<f64> {
    if x.len() != mu.len() || cov.rows() != x.len() {
        return Err(Error::Dimension(format!(
            "x: {}, mu: {}, cov: {}x{}",
            x.len(),
            mu.len(),
            cov.rows(),
            cov.cols()
        )));
    }
    let chol = Cholesky::factor(cov)?;
    let diff: Vec<f64> = x.iter().zip(mu).map(|(a, b)| a - b).collect();
    chol.inverse_norm(&diff)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::euclidean_distance;
    use proptest::prelude::*;

    #[test]
    fn diagonal_example() {
        let cov = Matrix::diagonal(&[4.0, 1.0]).unwrap();
        let d = mahalanobis_distance(&[2.0, 0.0], &[0.0, 0.0], &cov).unwrap();
        assert!((d - 1.0).abs() < 1e-15);
        assert_eq!(mahalanobis_distance(&[3.0, 1.0], &[3.0, 1.0], &cov).unwrap(), 0.0);
    }

    #[test]
    fn rejects_non_spd_and_bad_shapes() {
        let indefinite = Matrix::from_rows(&[[1.0, 2.0], [2.0, 1.0]]).unwrap();
        assert!(matches!(
            mahalanobis_distance(&[1.0, 0.0], &[0.0, 0.0], &indefinite),
            Err(Error::Factorization { .. })
        ));
        let asym = Matrix::from_rows(&[[2.0, 0.5], [0.0, 2.0]]).unwrap();
        assert!(Cholesky::factor(&asym).is_err());
        let eye = Matrix::identity(3);
        assert!(matches!(
            mahalanobis_distance(&[1.0, 0.0], &[0.0, 0.0], &eye),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn solve_recovers_known_system() {
        let a = Matrix::from_rows(&[[4.0, 12.0, -16.0], [12.0, 37.0, -43.0], [-16.0, -43.0, 98.0]]).unwrap();
        let chol = Cholesky::factor(&a).unwrap();
        assert_eq!(chol.lower().as_slice(), &[2.0, 0.0, 0.0, 6.0, 1.0, 0.0, -8.0, 5.0, 3.0]);
        let x = [1.0, -2.0, 0.5];
        let b = a.mat_vec(&x).unwrap();
        let got = chol.solve(&b).unwrap();
        for (g, e) in got.iter().zip(x) {
            assert!((g - e).abs() < 1e-10);
        }
    }

    proptest! {
        #[test]
        fn identity_covariance_is_euclidean(
            x in prop::collection::vec(-100.0..100.0f64, 6),
            mu in prop::collection::vec(-100.0..100.0f64, 6),
        ) {
            let m = mahalanobis_distance(&x, &mu, &Matrix::identity(6)).unwrap();
            let e = euclidean_distance(&x, &mu).unwrap();
            prop_assert!((m - e).abs() <= 1e-12 * (1.0 + e));
        }
    }
}
