//! Ridge tuning-parameter selection by delete-one cross-validation or
//! generalized cross-validation.
//!
//! CV scores unit-level prediction of the residualized post-period outcome
//! from the pre-period residual vector: for each control unit i, the whole
//! first stage (β̂, ξ̂, weight normalization, Ω̂, Ω̂ₜ) is recomputed without
//! unit i, and err_i(δ) = (ξ̂ᵢₜ − F̃ₜ*⁽⁻ⁱ⁾' ξ̂ᵢ,pre)² with unit i's residuals
//! taken against the leave-one-out coefficients. GCV works in moment space
//! with the effective-degrees-of-freedom trace of the ridge smoother.

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::estimator::{
    build_moments, estimate_beta, residualize, EstimatorConfig, MomentSet, Weighting,
};
use crate::linalg;
use crate::panel::{PanelData, GRAM_CONDITION_LIMIT};
use crate::weights::hermite_weights;

/// Number of grid points and the log-range around the scale anchor.
const GRID_POINTS: usize = 30;
const GRID_LO: f64 = 1e-6;
const GRID_HI: f64 = 1e2;

/// Log-spaced candidate values for δ, descending.
#[derive(Debug, Clone)]
pub struct DeltaGrid {
    values: Vec<f64>,
    scale_anchor: f64,
}

impl DeltaGrid {
    /// Descending candidate values.
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// trace(Ω̂'ŴΩ̂)/T₀, the mean squared singular value of Ŵ^{1/2}Ω̂.
    pub fn scale_anchor(&self) -> f64 {
        self.scale_anchor
    }

    pub fn smallest(&self) -> f64 {
        *self.values.last().unwrap()
    }

    pub fn largest(&self) -> f64 {
        self.values[0]
    }
}

/// Selection rule used to produce a [`DeltaSelection`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SelectionRule {
    Cv,
    Gcv,
}

/// Outcome of a δ search: the winning value and the whole score curve in
/// grid order. Ties resolve to the smallest δ.
#[derive(Debug, Clone)]
pub struct DeltaSelection {
    pub chosen: f64,
    /// (δ, score) pairs in grid (descending δ) order.
    pub scores: Vec<(f64, f64)>,
    pub rule: SelectionRule,
    /// Leave-one-out folds skipped for singular Gram matrices (CV only).
    pub skipped_folds: usize,
}

fn grid_from_anchor(anchor: f64) -> DeltaGrid {
    let mut values = Vec::with_capacity(GRID_POINTS);
    let log_hi = GRID_HI.ln();
    let log_lo = GRID_LO.ln();
    for k in 0..GRID_POINTS {
        let v = if k == 0 {
            anchor * GRID_HI
        } else if k == GRID_POINTS - 1 {
            anchor * GRID_LO
        } else {
            let frac = k as f64 / (GRID_POINTS - 1) as f64;
            anchor * (log_hi + frac * (log_lo - log_hi)).exp()
        };
        values.push(v);
    }
    DeltaGrid {
        values,
        scale_anchor: anchor,
    }
}

/// 30 log-spaced points from 1e-6·anchor to 1e2·anchor with
/// anchor = trace(Ω̂'ŴΩ̂)/T₀.
pub fn delta_grid(moments: &MomentSet, weighting: &Weighting) -> Result<DeltaGrid> {
    let wh = weighting.sqrt_matrix(moments.r_weights())?;
    let weighted = &wh * moments.omega_pre();
    let anchor = weighted.norm_squared() / moments.t0() as f64;
    if anchor <= 0.0 {
        return Err(Error::validation("delta grid needs a nonzero moment matrix"));
    }
    Ok(grid_from_anchor(anchor))
}

/// Scan (δ, score) pairs for the minimum, breaking ties toward smaller δ.
fn argmin_small_delta(scores: &[(f64, f64)]) -> (f64, f64) {
    let mut best = scores[0];
    for &(d, s) in &scores[1..] {
        if s < best.1 || (s == best.1 && d < best.0) {
            best = (d, s);
        }
    }
    best
}

/// Delete-one cross-validation over the δ grid for post period `t`.
pub fn select_delta_cv(
    panel: &PanelData,
    config: &EstimatorConfig,
    t: usize,
) -> Result<DeltaSelection> {
    let n0 = panel.n_controls();
    if n0 < 3 {
        return Err(Error::validation(format!(
            "delete-one cross-validation needs at least 3 control units, got {n0}"
        )));
    }
    if t > panel.t1() {
        return Err(Error::validation(format!(
            "post period {t} out of range 0..={}",
            panel.t1()
        )));
    }

    // grid from the full-sample moments; zero moments mean any δ predicts
    // the (identically zero) residuals perfectly, so fall back to a unit
    // anchor and let the tie-break return the smallest value
    let full_beta = estimate_beta(panel)?;
    let full_resid = residualize(panel, &full_beta)?;
    let full_weights = hermite_weights(config.r_weights, panel)?;
    let full_moments = build_moments(&full_resid, &full_weights, panel)?;
    let grid = match delta_grid(&full_moments, &config.weighting) {
        Ok(g) => g,
        Err(_) => grid_from_anchor(1.0),
    };

    let wh = config.weighting.sqrt_matrix(config.r_weights)?;
    let t0 = panel.t0();
    let mut sums = vec![0.0f64; grid.values().len()];
    let mut used = 0usize;
    let mut skipped = 0usize;

    for &unit in &panel.control_indices() {
        let loo = panel.remove_unit(unit)?;
        let gram = loo.control_gram();
        let svd = linalg::SvdFactors::new(&gram);
        let smin = svd.singular_values.iter().copied().fold(f64::INFINITY, f64::min);
        let cond = if smin > 0.0 { svd.sigma_max() / smin } else { f64::INFINITY };
        if !cond.is_finite() || cond > GRAM_CONDITION_LIMIT {
            skipped += 1;
            continue;
        }
        let beta = estimate_beta(&loo)?;
        let resid = residualize(&loo, &beta)?;
        let weights = hermite_weights(config.r_weights, &loo)?;
        let moments = build_moments(&resid, &weights, &loo)?;
        let a = &wh * moments.omega_pre();
        let at = &wh * moments.omega_post(t);
        let svd_a = linalg::SvdFactors::new(&a);
        let ata_t = a.transpose() * &at;

        // held-out unit's residuals against the leave-one-out coefficients
        let z_i = panel.covariate_row(unit);
        let xi_t = panel.outcome(unit, t as i64) - beta.beta_at(t as i64).dot(&z_i);
        let xi_pre = DVector::from_fn(t0, |s, _| {
            let time = -(s as i64) - 1;
            panel.outcome(unit, time) - beta.beta_at(time).dot(&z_i)
        });

        for (gi, &delta) in grid.values().iter().enumerate() {
            let f = linalg::tikhonov_from_svd(&svd_a, delta) * &at;
            debug_assert!({
                let check = a.transpose() * (&a * &f) + &f * delta - &ata_t;
                check.amax() <= 1e-8 * ata_t.amax().max(1.0)
            });
            let err = xi_t - f.dot(&xi_pre);
            sums[gi] += err * err;
        }
        used += 1;
    }

    if skipped * 5 > n0 {
        return Err(Error::numerical(format!(
            "cross-validation skipped {skipped} of {n0} folds for singular Gram matrices"
        )));
    }
    let scores: Vec<(f64, f64)> = grid
        .values()
        .iter()
        .zip(&sums)
        .map(|(&d, &s)| (d, s / used as f64))
        .collect();
    let (chosen, _) = argmin_small_delta(&scores);
    Ok(DeltaSelection {
        chosen,
        scores,
        rule: SelectionRule::Cv,
        skipped_folds: skipped,
    })
}

/// Generalized cross-validation over the δ grid for post period `t`:
/// GCV(δ) = ‖Ŵ^{1/2}(Ω̂ₜ − Ω̂F̃ₜ*)‖² / (1 − tr(H_δ)/R)² with
/// H_δ = Ŵ^{1/2}Ω̂ (Ω̂'ŴΩ̂ + δI)⁻¹ Ω̂'Ŵ^{1/2}.
pub fn select_delta_gcv(
    moments: &MomentSet,
    weighting: &Weighting,
    t: usize,
) -> Result<DeltaSelection> {
    let r = moments.r_weights();
    if r < 2 {
        return Err(Error::validation(
            "generalized cross-validation needs at least 2 weight functions",
        ));
    }
    if t >= moments.n_post() {
        return Err(Error::validation(format!(
            "post period {t} out of range 0..={}",
            moments.n_post() - 1
        )));
    }
    let grid = delta_grid(moments, weighting)?;
    let wh = weighting.sqrt_matrix(r)?;
    let a = &wh * moments.omega_pre();
    let at = &wh * moments.omega_post(t);
    let svd_a = linalg::SvdFactors::new(&a);

    let scores: Vec<(f64, f64)> = grid
        .values()
        .iter()
        .map(|&delta| {
            let f = linalg::tikhonov_from_svd(&svd_a, delta) * &at;
            let num = (&at - &a * f).norm_squared();
            let tr_h: f64 = svd_a
                .singular_values
                .iter()
                .map(|&s| s * s / (s * s + delta))
                .sum();
            let score = if tr_h >= r as f64 {
                f64::INFINITY
            } else {
                num / (1.0 - tr_h / r as f64).powi(2)
            };
            (delta, score)
        })
        .collect();
    let (chosen, _) = argmin_small_delta(&scores);
    Ok(DeltaSelection {
        chosen,
        scores,
        rule: SelectionRule::Gcv,
        skipped_folds: 0,
    })
}
