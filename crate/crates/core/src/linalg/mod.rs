//! Dense linear algebra kernels behind the eraser: symmetric eigensolver,
//! thin SVD, PSD square roots, Moore–Penrose pseudoinverses and
//! column-space projectors.
//!
//! Every routine takes a relative rank tolerance `rank_rtol`: spectral values
//! at or below `rank_rtol · max` are treated as exact zeros.

mod eigen;
mod matrix;
mod svd;

pub use eigen::SymmetricEigen;
pub use matrix::Matrix;
pub use svd::Svd;

use crate::error::{Error, Result};

/// Default relative rank cutoff for an `h×h` covariance paired with `k`
/// label columns: `max(h, k) · ε`.
pub fn default_rank_rtol(h: usize, k: usize) -> f64 {
    h.max(k).max(1) as f64 * f64::EPSILON
}

/// Whitening pair derived from one eigendecomposition of a PSD matrix `m`:
/// `whiten = (m^{1/2})⁺` and `unwhiten = whiten⁺ = m^{1/2}` restricted to
/// the retained eigenspace.
#[derive(Debug, Clone)]
pub struct Whitening {
    pub whiten: Matrix,
    pub unwhiten: Matrix,
    pub rank: usize,
}

impl Whitening {
    pub fn new(m: &Matrix, rank_rtol: f64) -> Result<Self> {
        let eig = psd_eigen(m, rank_rtol)?;
        let cutoff = rank_rtol * eig.max_value().max(0.0);
        let keep = |l: f64| l > cutoff && l > 0.0;
        let rank = eig.values.iter().filter(|&&l| keep(l)).count();
        let whiten = eig.map_values(|l| if keep(l) { 1.0 / l.sqrt() } else { 0.0 });
        let unwhiten = eig.map_values(|l| if keep(l) { l.sqrt() } else { 0.0 });
        Ok(Self {
            whiten,
            unwhiten,
            rank,
        })
    }
}

fn psd_eigen(m: &Matrix, rank_rtol: f64) -> Result<SymmetricEigen> {
    m.ensure_finite("PSD matrix")?;
    if !m.is_square() {
        return Err(Error::shape("psd matrix", "square", format!("{:?}", m.shape())));
    }
    let eig = SymmetricEigen::new(m)?;
    let lmax = eig.values.iter().fold(0.0_f64, |a, l| a.max(l.abs()));
    let tolerance = rank_rtol * lmax;
    if let Some(&lmin) = eig.values.first() {
        if lmin < -tolerance {
            return Err(Error::NotPsd {
                eigenvalue: lmin,
                tolerance,
            });
        }
    }
    Ok(eig)
}

/// `(m^{1/2})⁺` for a symmetric PSD matrix (symmetrized first).
pub fn psd_sqrt_pinv(m: &Matrix, rank_rtol: f64) -> Result<Matrix> {
    Ok(Whitening::new(m, rank_rtol)?.whiten)
}

/// Moore–Penrose pseudoinverse via thin SVD.
pub fn pinv(m: &Matrix, rank_rtol: f64) -> Result<Matrix> {
    let svd = Svd::new(m)?;
    let threshold = rank_rtol * svd.max_singular_value();
    let (rows, cols) = m.shape();
    let mut out = Matrix::zeros(cols, rows);
    for (k, &s) in svd.singular_values.iter().enumerate() {
        if s <= threshold || s == 0.0 {
            break;
        }
        let inv = 1.0 / s;
        for i in 0..cols {
            let vik = svd.v[(i, k)] * inv;
            if vik == 0.0 {
                continue;
            }
            for j in 0..rows {
                out[(i, j)] += vik * svd.u[(j, k)];
            }
        }
    }
    Ok(out)
}

/// Orthogonal projector `M·M⁺` onto the column space of `m`.
pub fn colspace_projector(m: &Matrix, rank_rtol: f64) -> Result<Matrix> {
    let svd = Svd::new(m)?;
    let threshold = rank_rtol * svd.max_singular_value();
    Ok(projector_from_svd(&svd, threshold).0)
}

/// Projector onto the span of left singular vectors with singular value
/// strictly above `threshold`; also returns that rank.
pub(crate) fn projector_from_svd(svd: &Svd, threshold: f64) -> (Matrix, usize) {
    let rank = svd.rank_above(threshold.max(0.0));
    let n = svd.u.rows();
    let mut p = Matrix::zeros(n, n);
    for k in 0..rank {
        for i in 0..n {
            let uik = svd.u[(i, k)];
            if uik == 0.0 {
                continue;
            }
            for j in 0..n {
                p[(i, j)] += uik * svd.u[(j, k)];
            }
        }
    }
    (p.symmetrize(), rank)
}
