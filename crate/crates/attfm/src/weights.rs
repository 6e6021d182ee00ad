//! Nonlinear weight functions ω_j built from Hermite polynomials.
//!
//! The default set is ω_j = H_{j+1} (physicists' Hermite, degrees 2..R+1)
//! evaluated on the first covariate that varies across control units, then
//! standardized to control-sample mean 0 and standard deviation 1. Constant
//! and linear polynomials are skipped because residualization annihilates
//! them in the moment matrix.

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::panel::PanelData;

/// Highest supported Hermite degree; ω_R uses degree R+1.
pub const MAX_HERMITE_DEGREE: usize = 10;

/// Physicists' Hermite polynomial H_n(x) via the three-term recurrence.
pub fn hermite_physicists(n: usize, x: f64) -> f64 {
    match n {
        0 => 1.0,
        1 => 2.0 * x,
        _ => {
            let (mut prev, mut cur) = (1.0, 2.0 * x);
            for k in 2..=n {
                let next = 2.0 * x * cur - 2.0 * (k as f64 - 1.0) * prev;
                prev = cur;
                cur = next;
            }
            cur
        }
    }
}

/// A set of R standardized weight functions evaluated on one covariate
/// column. Immutable; normalization constants are frozen at construction
/// from the panel's control units.
#[derive(Debug, Clone)]
pub struct WeightFunctionSet {
    count: usize,
    covariate_col: usize,
    means: Vec<f64>,
    sds: Vec<f64>,
}

impl WeightFunctionSet {
    pub fn count(&self) -> usize {
        self.count
    }

    pub fn covariate_col(&self) -> usize {
        self.covariate_col
    }

    /// ω(z) for one unit's covariate vector: R standardized values.
    pub fn evaluate(&self, z: &DVector<f64>) -> DVector<f64> {
        let x = z[self.covariate_col];
        DVector::from_fn(self.count, |j, _| {
            (hermite_physicists(j + 2, x) - self.means[j]) / self.sds[j]
        })
    }

    /// Raw (unstandardized) ω_j(z) = H_{j+1}(z); exposed for tests.
    pub fn evaluate_raw(&self, x: f64) -> DVector<f64> {
        DVector::from_fn(self.count, |j, _| hermite_physicists(j + 2, x))
    }
}

/// Build the default Hermite weight set for a panel.
///
/// Multivariate covariates use the first column that varies over control
/// units (intercept columns are constant and skipped); the univariate case
/// of the simulation design reduces to that column. Extension point: richer
/// multivariate sets can be added behind the same interface.
pub fn hermite_weights(r_weights: usize, panel: &PanelData) -> Result<WeightFunctionSet> {
    if r_weights == 0 {
        return Err(Error::validation("at least one weight function is required"));
    }
    if r_weights + 1 > MAX_HERMITE_DEGREE {
        return Err(Error::validation(format!(
            "R = {r_weights} needs Hermite degree {} but degrees are precomputed only through {}",
            r_weights + 1,
            MAX_HERMITE_DEGREE
        )));
    }
    let controls = panel.control_indices();
    if controls.len() < 2 {
        return Err(Error::validation("weight normalization needs at least 2 control units"));
    }
    let covariates = panel.covariates();
    let covariate_col = (0..panel.n_covariates())
        .find(|&c| {
            let first = covariates[(controls[0], c)];
            controls.iter().any(|&i| covariates[(i, c)] != first)
        })
        .ok_or_else(|| Error::validation("no covariate varies across control units"))?;

    let n0 = controls.len() as f64;
    let mut means = Vec::with_capacity(r_weights);
    let mut sds = Vec::with_capacity(r_weights);
    for j in 0..r_weights {
        let vals: Vec<f64> = controls
            .iter()
            .map(|&i| hermite_physicists(j + 2, covariates[(i, covariate_col)]))
            .collect();
        let mean = vals.iter().sum::<f64>() / n0;
        // sample standard deviation (n-1 denominator)
        let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n0 - 1.0);
        let sd = var.sqrt();
        if sd == 0.0 {
            return Err(Error::validation(format!(
                "weight function {} is constant over control units and cannot be standardized",
                j + 1
            )));
        }
        means.push(mean);
        sds.push(sd);
    }

    Ok(WeightFunctionSet {
        count: r_weights,
        covariate_col,
        means,
        sds,
    })
}
