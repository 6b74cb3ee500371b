//! Dense helpers over row-major `Vec<Vec<f64>>` matrices plus the Gaussian
//! law used for every primitive variable.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};

pub type Matrix = Vec<Vec<f64>>;

pub fn identity(n: usize) -> Matrix {
    (0..n)
        .map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
        .collect()
}

pub fn scaled_identity(n: usize, s: f64) -> Matrix {
    let mut m = identity(n);
    for (i, row) in m.iter_mut().enumerate() {
        row[i] = s;
    }
    m
}

pub fn shape(m: &Matrix) -> Result<(usize, usize)> {
    let rows = m.len();
    let cols = m.first().map_or(0, Vec::len);
    if m.iter().any(|r| r.len() != cols) {
        return Err(Error::DimensionMismatch("ragged matrix".into()));
    }
    Ok((rows, cols))
}

pub fn matmul(a: &Matrix, b: &Matrix) -> Matrix {
    let inner = b.len();
    let cols = b.first().map_or(0, Vec::len);
    a.iter()
        .map(|row| (0..cols).map(|j| (0..inner).map(|k| row[k] * b[k][j]).sum()).collect())
        .collect()
}

pub fn matvec(a: &Matrix, x: &[f64]) -> Vec<f64> {
    a.iter()
        .map(|row| row.iter().zip(x).map(|(r, v)| r * v).sum())
        .collect()
}

fn to_dmatrix(m: &Matrix) -> DMatrix<f64> {
    let n = m.len();
    let c = m.first().map_or(0, Vec::len);
    DMatrix::from_fn(n, c, |i, j| m[i][j])
}

/// Eigenvalues of a symmetric matrix, ascending.
pub fn sym_eigenvalues(m: &Matrix) -> Vec<f64> {
    let eig = SymmetricEigen::new(to_dmatrix(m));
    let mut v: Vec<f64> = eig.eigenvalues.iter().copied().collect();
    v.sort_by(f64::total_cmp);
    v
}

pub fn is_symmetric(m: &Matrix, tol: f64) -> bool {
    let n = m.len();
    m.iter().all(|r| r.len() == n)
        && (0..n).all(|i| (0..i).all(|j| (m[i][j] - m[j][i]).abs() <= tol * (1.0 + m[i][j].abs())))
}

pub fn is_positive_definite(m: &Matrix) -> bool {
    is_symmetric(m, 1e-12) && !m.is_empty() && to_dmatrix(m).cholesky().is_some()
}

/// Multivariate normal law with a Cholesky factorisation held in flat
/// row-major buffers for fast density evaluation.
#[derive(Debug, Clone)]
pub struct Gaussian {
    mean: Vec<f64>,
    chol: Vec<f64>,
    precision: Vec<f64>,
    log_norm: f64,
    std: Vec<f64>,
}

impl Gaussian {
    pub fn new(mean: &[f64], cov: &Matrix, label: &str) -> Result<Self> {
        let d = mean.len();
        if d == 0 || cov.len() != d || cov.iter().any(|r| r.len() != d) {
            return Err(Error::DimensionMismatch(format!(
                "covariance of {label} must be {d}x{d}"
            )));
        }
        if !is_symmetric(cov, 1e-12) {
            return Err(Error::SingularNoise(label.to_string()));
        }
        let m = to_dmatrix(cov);
        let chol = m
            .clone()
            .cholesky()
            .ok_or_else(|| Error::SingularNoise(label.to_string()))?;
        let l = chol.l();
        let diag_min = (0..d).map(|i| l[(i, i)]).fold(f64::INFINITY, f64::min);
        if !(diag_min > 0.0) || !diag_min.is_finite() {
            return Err(Error::SingularNoise(label.to_string()));
        }
        let inv = chol.inverse();
        let log_det: f64 = (0..d).map(|i| 2.0 * l[(i, i)].ln()).sum();
        Ok(Self {
            mean: mean.to_vec(),
            chol: (0..d * d).map(|k| l[(k / d, k % d)]).collect(),
            precision: (0..d * d).map(|k| inv[(k / d, k % d)]).collect(),
            log_norm: -0.5 * (d as f64 * (2.0 * std::f64::consts::PI).ln() + log_det),
            std: (0..d).map(|i| cov[i][i].sqrt()).collect(),
        })
    }

    pub fn standard(d: usize) -> Self {
        Self::new(&vec![0.0; d], &identity(d), "standard").expect("identity is PD")
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    /// Marginal standard deviations.
    pub fn std(&self) -> &[f64] {
        &self.std
    }

    pub fn precision_matrix(&self) -> Matrix {
        let d = self.dim();
        (0..d).map(|i| self.precision[i * d..(i + 1) * d].to_vec()).collect()
    }

    pub fn covariance_matrix(&self) -> Matrix {
        let d = self.dim();
        (0..d)
            .map(|i| {
                (0..d)
                    .map(|j| (0..d).map(|k| self.chol[i * d + k] * self.chol[j * d + k]).sum())
                    .collect()
            })
            .collect()
    }

    /// `mean + L z`.
    pub fn transform(&self, z: &[f64], out: &mut [f64]) {
        let d = self.dim();
        for i in 0..d {
            let mut s = self.mean[i];
            for j in 0..=i {
                s += self.chol[i * d + j] * z[j];
            }
            out[i] = s;
        }
    }

    /// Log density at `x` shifted by `shift`, i.e. `log N(x - shift)`.
    pub fn log_density_shifted(&self, x: &[f64], shift: &[f64]) -> f64 {
        let d = self.dim();
        if d == 1 {
            let r = x[0] - shift[0] - self.mean[0];
            return self.log_norm - 0.5 * r * r * self.precision[0];
        }
        let mut buf = [0.0f64; 16];
        let r = &mut buf[..d];
        for i in 0..d {
            r[i] = x[i] - shift[i] - self.mean[i];
        }
        let mut q = 0.0;
        for i in 0..d {
            let mut row = 0.0;
            for j in 0..d {
                row += self.precision[i * d + j] * r[j];
            }
            q += r[i] * row;
        }
        self.log_norm - 0.5 * q
    }

    pub fn log_density(&self, x: &[f64]) -> f64 {
        let zero = [0.0f64; 16];
        self.log_density_shifted(x, &zero[..self.dim()])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn singular_covariance_rejected() {
        let err = Gaussian::new(&[0.0], &vec![vec![0.0]], "w2").unwrap_err();
        assert_eq!(err, Error::SingularNoise("w2".into()));
        let err = Gaussian::new(&[0.0, 0.0], &vec![vec![1.0, 1.0], vec![1.0, 1.0]], "w").unwrap_err();
        assert!(matches!(err, Error::SingularNoise(_)));
    }

    #[test]
    fn density_matches_closed_form() {
        let g = Gaussian::new(&[1.0], &vec![vec![4.0]], "x").unwrap();
        let x = 2.5;
        let want = (-(x - 1.0f64).powi(2) / 8.0).exp() / (2.0 * std::f64::consts::PI * 4.0).sqrt();
        assert!((g.log_density(&[x]).exp() - want).abs() < 1e-15);
    }

    #[test]
    fn bivariate_density_matches_closed_form() {
        let cov = vec![vec![2.0, 0.5], vec![0.5, 1.0]];
        let g = Gaussian::new(&[0.0, 0.0], &cov, "w").unwrap();
        let det: f64 = 2.0 - 0.25;
        let (x, y) = (0.3, -0.7);
        let q = (1.0 * x * x - 2.0 * 0.5 * x * y + 2.0 * y * y) / det;
        let want = (-0.5 * q).exp() / (2.0 * std::f64::consts::PI * det.sqrt());
        assert!((g.log_density(&[x, y]).exp() - want).abs() < 1e-14);
    }
}
