//! Dense square matrices and the symmetric eigensolver behind the matrix
//! square root.

use crate::error::{Error, Result};

/// Convergence threshold of the Jacobi sweeps, relative to `‖M‖_F`.
pub const JACOBI_TOLERANCE: f64 = 1e-12;
pub const JACOBI_MAX_SWEEPS: usize = 100;

/// Row-major `n × n` matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    n: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(n: usize) -> Self {
        Self {
            n,
            data: vec![0.0; n * n],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn diag(values: &[f64]) -> Self {
        let mut m = Self::zeros(values.len());
        for (i, &v) in values.iter().enumerate() {
            m.set(i, i, v);
        }
        m
    }

    pub fn from_vec(n: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != n * n {
            return Err(Error::Dimension(format!(
                "{} values cannot form a {n}x{n} matrix",
                data.len()
            )));
        }
        Ok(Self { n, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        Self::from_vec(rows.len(), rows.concat())
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.n + j] = v;
    }

    pub fn transpose(&self) -> Self {
        let mut t = Self::zeros(self.n);
        for i in 0..self.n {
            for j in 0..self.n {
                t.set(j, i, self.get(i, j));
            }
        }
        t
    }

    pub fn matmul(&self, other: &Matrix) -> Matrix {
        assert_eq!(self.n, other.n, "matmul dimension mismatch");
        let n = self.n;
        let mut out = Self::zeros(n);
        for i in 0..n {
            let row = &mut out.data[i * n..(i + 1) * n];
            for k in 0..n {
                let a = self.data[i * n + k];
                if a == 0.0 {
                    continue;
                }
                for (o, &b) in row.iter_mut().zip(&other.data[k * n..(k + 1) * n]) {
                    *o += a * b;
                }
            }
        }
        out
    }

    pub fn trace(&self) -> f64 {
        (0..self.n).map(|i| self.get(i, i)).sum()
    }

    pub fn frobenius(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// `(M + Mᵀ) / 2`.
    pub fn symmetrized(&self) -> Self {
        let mut s = self.clone();
        for i in 0..self.n {
            for j in i + 1..self.n {
                let v = 0.5 * (self.get(i, j) + self.get(j, i));
                s.set(i, j, v);
                s.set(j, i, v);
            }
        }
        s
    }

    pub fn max_asymmetry(&self) -> f64 {
        let mut worst = 0.0f64;
        for i in 0..self.n {
            for j in i + 1..self.n {
                worst = worst.max((self.get(i, j) - self.get(j, i)).abs());
            }
        }
        worst
    }

    fn off_diagonal_norm(&self) -> f64 {
        let mut s = 0.0;
        for i in 0..self.n {
            for j in 0..self.n {
                if i != j {
                    s += self.get(i, j).powi(2);
                }
            }
        }
        s.sqrt()
    }
}

/// Eigenvalues and eigenvectors (columns of the returned matrix) of a
/// symmetric matrix by cyclic Jacobi rotations. Sweeps stop once the
/// off-diagonal Frobenius norm falls below `1e-12·‖M‖_F`.
pub fn sym_eigen(m: &Matrix) -> Result<(Vec<f64>, Matrix)> {
    let n = m.n;
    let mut a = m.symmetrized();
    let mut v = Matrix::identity(n);
    let threshold = JACOBI_TOLERANCE * m.frobenius();
    let mut converged = false;
    for _ in 0..JACOBI_MAX_SWEEPS {
        if a.off_diagonal_norm() <= threshold {
            converged = true;
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a.get(p, q);
                if apq == 0.0 {
                    continue;
                }
                let theta = (a.get(q, q) - a.get(p, p)) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (akp, akq) = (a.get(k, p), a.get(k, q));
                    a.set(k, p, c * akp - s * akq);
                    a.set(k, q, s * akp + c * akq);
                }
                for k in 0..n {
                    let (apk, aqk) = (a.get(p, k), a.get(q, k));
                    a.set(p, k, c * apk - s * aqk);
                    a.set(q, k, s * apk + c * aqk);
                }
                a.set(p, q, 0.0);
                a.set(q, p, 0.0);
                for k in 0..n {
                    let (vkp, vkq) = (v.get(k, p), v.get(k, q));
                    v.set(k, p, c * vkp - s * vkq);
                    v.set(k, q, s * vkp + c * vkq);
                }
            }
        }
    }
    if !converged && a.off_diagonal_norm() > threshold {
        return Err(Error::Numerical(format!(
            "Jacobi eigensolver did not converge in {JACOBI_MAX_SWEEPS} sweeps"
        )));
    }
    let values = (0..n).map(|i| a.get(i, i)).collect();
    Ok((values, v))
}

fn check_symmetric(m: &Matrix) -> Result<()> {
    let scale = m.frobenius().max(f64::MIN_POSITIVE);
    if m.max_asymmetry() > 1e-8 * scale {
        return Err(Error::InvalidArgument(format!(
            "matrix is not symmetric (max asymmetry {:e})",
            m.max_asymmetry()
        )));
    }
    Ok(())
}

/// Clamps eigenvalues within `1e-8·max|λ|` below zero; anything lower means
/// the input is genuinely indefinite.
fn clamp_psd(values: &mut [f64]) -> Result<()> {
    let scale = values.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let floor = -1e-8 * scale;
    for v in values.iter_mut() {
        if *v < floor {
            return Err(Error::Numerical(format!(
                "matrix is not positive semidefinite (eigenvalue {v:e})"
            )));
        }
        *v = v.max(0.0);
    }
    Ok(())
}

/// Eigenvalues of a symmetric PSD matrix, clamped at zero.
pub fn psd_eigenvalues(m: &Matrix) -> Result<Vec<f64>> {
    check_symmetric(m)?;
    let (mut values, _) = sym_eigen(m)?;
    clamp_psd(&mut values)?;
    Ok(values)
}

/// Principal square root `V·diag(√λ)·Vᵀ` of a symmetric PSD matrix.
pub fn sqrtm_psd(m: &Matrix) -> Result<Matrix> {
    check_symmetric(m)?;
    let (mut values, v) = sym_eigen(m)?;
    clamp_psd(&mut values)?;
    let n = m.n;
    let roots: Vec<f64> = values.iter().map(|x| x.sqrt()).collect();
    let mut out = Matrix::zeros(n);
    for i in 0..n {
        for j in i..n {
            let s: f64 = (0..n).map(|k| v.get(i, k) * roots[k] * v.get(j, k)).sum();
            out.set(i, j, s);
            out.set(j, i, s);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_psd(n: usize, rng: &mut ChaCha8Rng) -> Matrix {
        let a = Matrix::from_vec(n, (0..n * n).map(|_| rng.random::<f64>() - 0.5).collect()).unwrap();
        a.transpose().matmul(&a)
    }

    fn rel_err(a: &Matrix, b: &Matrix) -> f64 {
        let diff: f64 = a.data().iter().zip(b.data()).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
        diff / b.frobenius().max(f64::MIN_POSITIVE)
    }

    #[test]
    fn identity_and_diagonal() {
        assert_eq!(sqrtm_psd(&Matrix::identity(3)).unwrap(), Matrix::identity(3));
        let r = sqrtm_psd(&Matrix::diag(&[4.0, 9.0])).unwrap();
        assert!(rel_err(&r, &Matrix::diag(&[2.0, 3.0])) < 1e-15);
    }

    #[test]
    fn eigen_decomposition_reconstructs() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let m = random_psd(6, &mut rng);
        let (vals, v) = sym_eigen(&m).unwrap();
        let back = v.matmul(&Matrix::diag(&vals)).matmul(&v.transpose());
        assert!(rel_err(&back, &m) < 1e-12);
        let vtv = v.transpose().matmul(&v);
        assert!(rel_err(&vtv, &Matrix::identity(6)) < 1e-12);
    }

    #[test]
    fn random_psd_square_root() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let m = random_psd(8, &mut rng);
        let r = sqrtm_psd(&m).unwrap();
        assert!(rel_err(&r.matmul(&r), &m) < 1e-8);
    }

    #[test]
    fn rank_deficient_is_accepted() {
        let v = [1.0, 2.0, 3.0];
        let m = Matrix::from_vec(3, (0..9).map(|i| v[i / 3] * v[i % 3]).collect()).unwrap();
        let r = sqrtm_psd(&m).unwrap();
        assert!(rel_err(&r.matmul(&r), &m) < 1e-8);
    }

    #[test]
    fn indefinite_and_asymmetric_rejected() {
        assert_eq!(sqrtm_psd(&Matrix::diag(&[1.0, -1.0])).unwrap_err().kind(), "numerical");
        let m = Matrix::from_rows(&[vec![1.0, 0.5], vec![0.0, 1.0]]).unwrap();
        assert_eq!(sqrtm_psd(&m).unwrap_err().kind(), "invalid_argument");
    }

    #[test]
    fn zero_matrix() {
        assert_eq!(sqrtm_psd(&Matrix::zeros(3)).unwrap(), Matrix::zeros(3));
    }
}
