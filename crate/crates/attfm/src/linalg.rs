//! SVD-based matrix kernels: pseudoinverse, Tikhonov-regularized inverse,
//! PSD square root, and spectral norm.
//!
//! Every kernel routes through one singular value decomposition so that the
//! exact spectral identities relating the pseudoinverse and the regularized
//! inverse (bounds in `1/δ`, `1/(2√δ)`, `σ₁²/(σ₁²+δ)`, `δ/(σ_q(σ_q²+δ))`)
//! hold in floating point and can be asserted directly in tests.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Thin singular value decomposition `B = U Σ V'`.
///
/// `u` is m×k and `v` is n×k with orthonormal columns, k = min(m, n);
/// singular values are sorted in nonincreasing order.
#[derive(Debug, Clone)]
pub struct SvdFactors {
    pub u: DMatrix<f64>,
    pub singular_values: DVector<f64>,
    pub v: DMatrix<f64>,
}

impl SvdFactors {
    /// Decompose an arbitrary real matrix.
    pub fn new(b: &DMatrix<f64>) -> Self {
        let svd = b.clone().svd(true, true);
        let u = svd.u.expect("svd requested u");
        let v_t = svd.v_t.expect("svd requested v_t");
        SvdFactors {
            u,
            singular_values: svd.singular_values,
            v: v_t.transpose(),
        }
    }

    /// Largest singular value (0 for an empty spectrum).
    pub fn sigma_max(&self) -> f64 {
        self.singular_values.iter().copied().fold(0.0, f64::max)
    }

    /// Number of singular values above `tol_rel * σ₁`.
    pub fn numerical_rank(&self, tol_rel: f64) -> usize {
        let cut = tol_rel * self.sigma_max();
        self.singular_values.iter().filter(|&&s| s > cut).count()
    }

    /// Reassemble `V diag(f(σ_i)) U'` for a spectral filter `f`.
    fn filtered_inverse(&self, f: impl Fn(f64) -> f64) -> DMatrix<f64> {
        let k = self.singular_values.len();
        let mut scaled_ut = self.u.transpose();
        for i in 0..k {
            let fi = f(self.singular_values[i]);
            scaled_ut.row_mut(i).scale_mut(fi);
        }
        &self.v * scaled_ut
    }
}

/// Default relative rank tolerance for `b`: max(m, n) · machine epsilon.
pub fn default_rank_tol(b: &DMatrix<f64>) -> f64 {
    b.nrows().max(b.ncols()) as f64 * f64::EPSILON
}

/// Moore-Penrose pseudoinverse `B⁺` with singular values below
/// `rank_tol · σ₁` treated as zero.
///
/// `rank_tol = None` uses [`default_rank_tol`]. The result satisfies the four
/// Penrose conditions up to roundoff.
pub fn svd_pinv(b: &DMatrix<f64>, rank_tol: Option<f64>) -> DMatrix<f64> {
    let tol = rank_tol.unwrap_or_else(|| default_rank_tol(b));
    let svd = SvdFactors::new(b);
    let cut = tol * svd.sigma_max();
    svd.filtered_inverse(|s| if s > cut { 1.0 / s } else { 0.0 })
}

/// Tikhonov-regularized inverse `(B'B + δ I)⁻¹ B'`.
///
/// Computed spectrally as `V diag(σ_i / (σ_i² + δ)) U'`, which converges to
/// `B⁺` as δ → 0 and keeps the regularized normal equations satisfied to
/// machine precision.
pub fn tikhonov_inverse(b: &DMatrix<f64>, delta: f64) -> Result<DMatrix<f64>> {
    if !(delta > 0.0) {
        return Err(Error::validation(format!(
            "tikhonov_inverse requires delta > 0, got {delta}"
        )));
    }
    let svd = SvdFactors::new(b);
    Ok(tikhonov_from_svd(&svd, delta))
}

/// Same as [`tikhonov_inverse`] but reusing an existing decomposition;
/// used where many δ values are applied to one matrix (grids, CV folds).
pub fn tikhonov_from_svd(svd: &SvdFactors, delta: f64) -> DMatrix<f64> {
    svd.filtered_inverse(|s| s / (s * s + delta))
}

/// Symmetric PSD square root: returns S with S·S = W.
///
/// Eigenvalues in `[-1e-8, 0)` are clamped to zero (sample weighting
/// matrices may be PSD only up to rounding); anything more negative is an
/// error, as is an asymmetric input.
pub fn psd_sqrt(w: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if w.nrows() != w.ncols() {
        return Err(Error::validation(format!(
            "psd_sqrt requires a square matrix, got {}x{}",
            w.nrows(),
            w.ncols()
        )));
    }
    let scale = w.amax().max(1.0);
    for i in 0..w.nrows() {
        for j in (i + 1)..w.ncols() {
            if (w[(i, j)] - w[(j, i)]).abs() > 1e-10 * scale {
                return Err(Error::validation("psd_sqrt requires a symmetric matrix"));
            }
        }
    }
    let eig = w.clone().symmetric_eigen();
    let mut roots = DVector::zeros(eig.eigenvalues.len());
    for (i, &lam) in eig.eigenvalues.iter().enumerate() {
        if lam < -1e-8 {
            return Err(Error::numerical(format!(
                "psd_sqrt: eigenvalue {lam:.3e} below -1e-8; matrix is not PSD"
            )));
        }
        roots[i] = lam.max(0.0).sqrt();
    }
    let mut scaled = eig.eigenvectors.clone();
    for i in 0..roots.len() {
        scaled.column_mut(i).scale_mut(roots[i]);
    }
    Ok(&scaled * eig.eigenvectors.transpose())
}

/// Spectral norm σ₁(B), the largest singular value.
pub fn spectral_norm(b: &DMatrix<f64>) -> f64 {
    if b.nrows() == 0 || b.ncols() == 0 {
        return 0.0;
    }
    SvdFactors::new(b).sigma_max()
}
