//! Streaming first and second moments of paired samples `(x, z)`.
//!
//! Co-moments are kept as centered sums rather than normalized covariances
//! so that merging two shards is exact (Chan et al. pairwise update).
//! Covariances use the population convention `comoment / n`. The eraser
//! only depends on the ratio of `Σ_XZ` to `Σ_XX`-derived whitening, so the
//! `1/n` versus `1/(n-1)` choice cancels out of the fitted map.

use crate::error::{Error, Result};
use crate::linalg::Matrix;

#[derive(Debug, Clone, PartialEq)]
pub struct MomentAccumulator {
    n: u64,
    mean_x: Vec<f64>,
    mean_z: Vec<f64>,
    // upper triangle only; mirrored on read
    comoment_xx: Matrix,
    comoment_xz: Matrix,
    comoment_zz: Matrix,
}

impl MomentAccumulator {
    pub fn new(x_dim: usize, z_dim: usize) -> Self {
        Self {
            n: 0,
            mean_x: vec![0.0; x_dim],
            mean_z: vec![0.0; z_dim],
            comoment_xx: Matrix::zeros(x_dim, x_dim),
            comoment_xz: Matrix::zeros(x_dim, z_dim),
            comoment_zz: Matrix::zeros(z_dim, z_dim),
        }
    }

    pub fn x_dim(&self) -> usize {
        self.mean_x.len()
    }

    pub fn z_dim(&self) -> usize {
        self.mean_z.len()
    }

    pub fn count(&self) -> u64 {
        self.n
    }

    pub fn mean_x(&self) -> &[f64] {
        &self.mean_x
    }

    pub fn mean_z(&self) -> &[f64] {
        &self.mean_z
    }

    /// Welford update with one sample.
    pub fn update(&mut self, x: &[f64], z: &[f64]) -> Result<()> {
        self.check_sample(x, z)?;
        self.update_unchecked(x.iter().copied(), z);
        Ok(())
    }

    /// Update with a 32-bit sample (embedding frames arrive as `f32`).
    pub fn update_f32(&mut self, x: &[f32], z: &[f64]) -> Result<()> {
        if x.len() != self.x_dim() {
            return Err(Error::shape("moment update (x)", self.x_dim(), x.len()));
        }
        if z.len() != self.z_dim() {
            return Err(Error::shape("moment update (z)", self.z_dim(), z.len()));
        }
        if !x.iter().all(|v| v.is_finite()) || !z.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("moment update sample".into()));
        }
        self.update_unchecked(x.iter().map(|&v| f64::from(v)), z);
        Ok(())
    }

    fn check_sample(&self, x: &[f64], z: &[f64]) -> Result<()> {
        if x.len() != self.x_dim() {
            return Err(Error::shape("moment update (x)", self.x_dim(), x.len()));
        }
        if z.len() != self.z_dim() {
            return Err(Error::shape("moment update (z)", self.z_dim(), z.len()));
        }
        if !x.iter().chain(z).all(|v| v.is_finite()) {
            return Err(Error::NonFinite("moment update sample".into()));
        }
        Ok(())
    }

    fn update_unchecked(&mut self, x: impl Iterator<Item = f64>, z: &[f64]) {
        self.n += 1;
        let n = self.n as f64;
        let dx: Vec<f64> = x.zip(&self.mean_x).map(|(v, m)| v - m).collect();
        let dz: Vec<f64> = z.iter().zip(&self.mean_z).map(|(v, m)| v - m).collect();
        for (m, d) in self.mean_x.iter_mut().zip(&dx) {
            *m += d / n;
        }
        for (m, d) in self.mean_z.iter_mut().zip(&dz) {
            *m += d / n;
        }
        // (x - mean_old)(x - mean_new)ᵀ = f · dx dxᵀ with f = (n-1)/n
        let f = (n - 1.0) / n;
        if f == 0.0 {
            return;
        }
        for (i, &dzi) in dz.iter().enumerate() {
            for (c, d) in self.comoment_zz.row_mut(i).iter_mut().zip(&dz) {
                *c += f * dzi * d;
            }
        }
        let h = dx.len();
        for i in 0..h {
            let a = f * dx[i];
            if a == 0.0 {
                continue;
            }
            let row = &mut self.comoment_xx.row_mut(i)[i..];
            for (c, d) in row.iter_mut().zip(&dx[i..]) {
                *c += a * d;
            }
            for (c, d) in self.comoment_xz.row_mut(i).iter_mut().zip(&dz) {
                *c += a * d;
            }
        }
    }

    /// Pairwise merge; equivalent to streaming `self`'s samples then `other`'s.
    pub fn merge(&self, other: &MomentAccumulator) -> Result<MomentAccumulator> {
        if self.x_dim() != other.x_dim() || self.z_dim() != other.z_dim() {
            return Err(Error::shape(
                "moment merge",
                format!("({}, {})", self.x_dim(), self.z_dim()),
                format!("({}, {})", other.x_dim(), other.z_dim()),
            ));
        }
        if other.n == 0 {
            return Ok(self.clone());
        }
        if self.n == 0 {
            return Ok(other.clone());
        }
        let na = self.n as f64;
        let nb = other.n as f64;
        let n = na + nb;
        let dx: Vec<f64> = other.mean_x.iter().zip(&self.mean_x).map(|(b, a)| b - a).collect();
        let dz: Vec<f64> = other.mean_z.iter().zip(&self.mean_z).map(|(b, a)| b - a).collect();
        let w = na * nb / n;

        let mut out = self.clone();
        out.n = self.n + other.n;
        for (m, d) in out.mean_x.iter_mut().zip(&dx) {
            *m += d * nb / n;
        }
        for (m, d) in out.mean_z.iter_mut().zip(&dz) {
            *m += d * nb / n;
        }
        for (i, dzi) in dz.iter().enumerate() {
            for (j, dzj) in dz.iter().enumerate() {
                out.comoment_zz[(i, j)] += other.comoment_zz[(i, j)] + w * dzi * dzj;
            }
        }
        let h = dx.len();
        for i in 0..h {
            for j in i..h {
                out.comoment_xx[(i, j)] += other.comoment_xx[(i, j)] + w * dx[i] * dx[j];
            }
            for (j, dzj) in dz.iter().enumerate() {
                out.comoment_xz[(i, j)] += other.comoment_xz[(i, j)] + w * dx[i] * dzj;
            }
        }
        Ok(out)
    }

    /// Centered sum `Σ (x-μ)(x-μ)ᵀ`, exactly symmetric.
    pub fn comoment_xx(&self) -> Matrix {
        let mut m = self.comoment_xx.clone();
        let h = m.rows();
        for i in 0..h {
            for j in 0..i {
                m[(i, j)] = m[(j, i)];
            }
        }
        m
    }

    /// Centered sum `Σ (x-μ_x)(z-μ_z)ᵀ`.
    pub fn comoment_xz(&self) -> &Matrix {
        &self.comoment_xz
    }

    /// Population covariance of `z`; zeros when empty.
    pub fn covariance_zz(&self) -> Matrix {
        if self.n == 0 {
            return Matrix::zeros(self.z_dim(), self.z_dim());
        }
        self.comoment_zz.scale(1.0 / self.n as f64)
    }

    /// Population covariance of `x`; zeros when empty.
    pub fn covariance_xx(&self) -> Matrix {
        if self.n == 0 {
            return Matrix::zeros(self.x_dim(), self.x_dim());
        }
        self.comoment_xx().scale(1.0 / self.n as f64)
    }

    /// Population cross-covariance of `x` and `z`; zeros when empty.
    pub fn covariance_xz(&self) -> Matrix {
        if self.n == 0 {
            return Matrix::zeros(self.x_dim(), self.z_dim());
        }
        self.comoment_xz.scale(1.0 / self.n as f64)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_sample_example() {
        let mut acc = MomentAccumulator::new(2, 1);
        acc.update(&[1.0, 0.0], &[1.0]).unwrap();
        acc.update(&[3.0, 0.0], &[0.0]).unwrap();
        assert_eq!(acc.mean_x(), &[2.0, 0.0]);
        let cov = acc.covariance_xx();
        assert_eq!(cov.as_slice(), &[1.0, 0.0, 0.0, 0.0]);
        // cov(x0, z) = ((1-2)(1-0.5) + (3-2)(0-0.5)) / 2 = -0.5
        assert_eq!(acc.covariance_xz().as_slice(), &[-0.5, 0.0]);
    }

    #[test]
    fn label_covariance_of_one_hot() {
        let mut acc = MomentAccumulator::new(1, 2);
        for (x, z) in [(0.0, [1.0, 0.0]), (1.0, [0.0, 1.0]), (2.0, [1.0, 0.0]), (3.0, [1.0, 0.0])] {
            acc.update(&[x], &z).unwrap();
        }
        // p = (3/4, 1/4): diag(p) - p pᵀ
        let c = acc.covariance_zz();
        assert!((c[(0, 0)] - 0.1875).abs() < 1e-15);
        assert!((c[(0, 1)] + 0.1875).abs() < 1e-15);
    }

    #[test]
    fn single_update_has_zero_comoment() {
        let mut acc = MomentAccumulator::new(3, 2);
        acc.update(&[1.0, -2.0, 5.0], &[0.0, 1.0]).unwrap();
        assert_eq!(acc.count(), 1);
        assert_eq!(acc.covariance_xx().max_abs(), 0.0);
        assert_eq!(acc.covariance_xz().max_abs(), 0.0);
    }

    #[test]
    fn empty_is_all_zero() {
        let acc = MomentAccumulator::new(2, 2);
        assert_eq!(acc.count(), 0);
        assert_eq!(acc.covariance_xx().max_abs(), 0.0);
        assert!(acc.mean_x().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let mut acc = MomentAccumulator::new(2, 1);
        assert!(matches!(acc.update(&[1.0], &[0.0]), Err(Error::Shape { .. })));
        assert!(matches!(acc.update(&[1.0, 2.0], &[0.0, 1.0]), Err(Error::Shape { .. })));
        assert!(matches!(
            acc.update(&[f64::NAN, 2.0], &[0.0]),
            Err(Error::NonFinite(_))
        ));
        let other = MomentAccumulator::new(3, 1);
        assert!(acc.merge(&other).is_err());
    }

    #[test]
    fn merge_with_empty_is_identity() {
        let mut acc = MomentAccumulator::new(2, 1);
        acc.update(&[1.0, 2.0], &[1.0]).unwrap();
        acc.update(&[0.5, -1.0], &[0.0]).unwrap();
        let empty = MomentAccumulator::new(2, 1);
        assert_eq!(acc.merge(&empty).unwrap(), acc);
        assert_eq!(empty.merge(&acc).unwrap(), acc);
    }
}
