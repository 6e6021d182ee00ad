//! Gauss-Hermite quadrature for expectations under a standard normal.
//!
//! Nodes and weights come from the Golub-Welsch eigendecomposition of the
//! Jacobi matrix for the physicists' Hermite weight `exp(-x²)`.

use nalgebra::DMatrix;
use std::sync::OnceLock;

/// Nodes and weights of the n-point Gauss-Hermite rule
/// (∫ f(x) e^{-x²} dx ≈ Σ wᵢ f(xᵢ)), nodes ascending.
pub fn gauss_hermite(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1, "quadrature order must be at least 1");
    // Jacobi matrix: zero diagonal, off-diagonal sqrt(k/2)
    let mut j = DMatrix::<f64>::zeros(n, n);
    for k in 1..n {
        let off = (k as f64 / 2.0).sqrt();
        j[(k - 1, k)] = off;
        j[(k, k - 1)] = off;
    }
    let eig = j.symmetric_eigen();
    let mu0 = std::f64::consts::PI.sqrt(); // ∫ e^{-x²} dx
    let mut pairs: Vec<(f64, f64)> = (0..n)
        .map(|i| {
            let v0 = eig.eigenvectors[(0, i)];
            (eig.eigenvalues[i], mu0 * v0 * v0)
        })
        .collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    pairs.into_iter().unzip()
}

/// E[g(Z)] for Z ~ N(0,1) via the n-point Gauss-Hermite rule.
pub fn normal_expectation(g: impl Fn(f64) -> f64, n: usize) -> f64 {
    let (x, w) = gauss_hermite(n);
    let inv_sqrt_pi = std::f64::consts::PI.sqrt().recip();
    let sqrt2 = std::f64::consts::SQRT_2;
    x.iter()
        .zip(&w)
        .map(|(&xi, &wi)| wi * g(sqrt2 * xi))
        .sum::<f64>()
        * inv_sqrt_pi
}

/// Centering constant E[log(1 + Z⁴)], Z ~ N(0,1), computed once with a
/// 200-node rule.
pub fn centering_log1p_z4() -> f64 {
    static VALUE: OnceLock<f64> = OnceLock::new();
    *VALUE.get_or_init(|| normal_expectation(|z| (1.0 + z.powi(4)).ln(), 200))
}
