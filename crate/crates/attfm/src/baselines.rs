//! Comparison estimators: difference-in-differences and synthetic control.
//!
//! DID is the plain 2×T means estimator (no covariates); it is exactly
//! invariant to unit and period fixed effects but misspecified under factor
//! structures. Synthetic control matches pre-treatment predictors with
//! simplex-constrained least squares over the control units, with the
//! predictor menus used in comparative simulation studies.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::panel::PanelData;
use crate::simplex::{simplex_lsq, SimplexLsq};

/// Predictor menu for synthetic control.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PredictorSpec {
    /// Predictors I: all pre-treatment outcome lags.
    AllPreLags,
    /// Predictors II: every second lag starting at t = −1, plus the
    /// covariates.
    HalfLagsAndCovariates,
}

/// Simplex weights over control units with solver provenance.
#[derive(Debug, Clone)]
pub struct ScWeights {
    /// Length N₀, ordered like `panel.control_indices()`.
    pub weights: DVector<f64>,
    /// Final squared predictor discrepancy.
    pub objective: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Synthetic-control treatment effects with the weights that produced them.
#[derive(Debug, Clone)]
pub struct ScAtt {
    /// ATTₜ = Y₀ₜ − Σᵢ wᵢ Yᵢₜ for t = 0..=T₁.
    pub att: Vec<f64>,
    pub weights: ScWeights,
}

const SOLVER_MAX_ITER: usize = 10_000;
const SOLVER_GAP_TOL: f64 = 1e-10;

/// DID effects per post period:
/// ATTₜ = (Y₀ₜ − mean_{s<0} Y₀ₛ) − meanᵢ (Yᵢₜ − mean_{s<0} Yᵢₛ).
pub fn did_att(panel: &PanelData) -> Result<Vec<f64>> {
    let treated = panel.treated_unit()?;
    let controls = panel.control_indices();
    if controls.is_empty() {
        return Err(Error::validation("DID needs at least one control unit"));
    }
    let t0 = panel.t0();
    let pre_mean = |i: usize| -> f64 {
        (1..=t0).map(|s| panel.outcome(i, -(s as i64))).sum::<f64>() / t0 as f64
    };
    let treated_pre = pre_mean(treated);
    let control_pre: Vec<f64> = controls.iter().map(|&i| pre_mean(i)).collect();

    let mut out = Vec::with_capacity(panel.t1() + 1);
    for t in 0..=panel.t1() as i64 {
        let treated_diff = panel.outcome(treated, t) - treated_pre;
        let control_diff = controls
            .iter()
            .zip(&control_pre)
            .map(|(&i, &pre)| panel.outcome(i, t) - pre)
            .sum::<f64>()
            / controls.len() as f64;
        out.push(treated_diff - control_diff);
    }
    Ok(out)
}

/// Build the predictor matrix: one row per predictor, one column per unit
/// (treated first, then controls in panel order), each row scaled to
/// control-sample standard deviation 1 (rows without variation keep scale 1).
fn predictor_matrix(panel: &PanelData, spec: PredictorSpec) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let treated = panel.treated_unit()?;
    let controls = panel.control_indices();
    let t0 = panel.t0();

    let mut lag_times: Vec<i64> = Vec::new();
    match spec {
        PredictorSpec::AllPreLags => {
            for s in 1..=t0 {
                lag_times.push(-(s as i64));
            }
        }
        PredictorSpec::HalfLagsAndCovariates => {
            let mut s = 1;
            while s <= t0 {
                lag_times.push(-(s as i64));
                s += 2;
            }
        }
    }
    let d = match spec {
        PredictorSpec::AllPreLags => 0,
        PredictorSpec::HalfLagsAndCovariates => panel.n_covariates(),
    };
    let n_pred = lag_times.len() + d;

    let value = |row: usize, unit: usize| -> f64 {
        if row < lag_times.len() {
            panel.outcome(unit, lag_times[row])
        } else {
            panel.covariates()[(unit, row - lag_times.len())]
        }
    };

    let n0 = controls.len();
    let mut x0 = DVector::<f64>::zeros(n_pred);
    let mut xc = DMatrix::<f64>::zeros(n_pred, n0);
    for row in 0..n_pred {
        let vals: Vec<f64> = controls.iter().map(|&i| value(row, i)).collect();
        let mean = vals.iter().sum::<f64>() / n0 as f64;
        let sd = if n0 > 1 {
            (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n0 as f64 - 1.0)).sqrt()
        } else {
            0.0
        };
        let span = vals.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1.0);
        let scale = if sd > 1e-12 * span { sd } else { 1.0 };
        x0[row] = value(row, treated) / scale;
        for (c, &v) in vals.iter().enumerate() {
            xc[(row, c)] = v / scale;
        }
    }
    Ok((x0, xc))
}

/// Donor weights from simplex-constrained least squares on the predictor
/// discrepancy. Non-convergence is flagged, never thrown; the weights are
/// still returned.
pub fn sc_weights(panel: &PanelData, spec: PredictorSpec) -> Result<ScWeights> {
    let controls = panel.control_indices();
    if controls.len() < 2 {
        return Err(Error::validation(
            "synthetic control needs at least 2 control units",
        ));
    }
    let (x0, xc) = predictor_matrix(panel, spec)?;
    let SimplexLsq {
        mut weights,
        objective,
        iterations,
        converged,
        ..
    } = simplex_lsq(&xc, &x0, SOLVER_MAX_ITER, SOLVER_GAP_TOL);
    for w in weights.iter_mut() {
        if *w < 0.0 {
            *w = 0.0; // clamp solver roundoff
        }
    }
    Ok(ScWeights {
        weights,
        objective,
        iterations,
        converged,
    })
}

/// Synthetic-control effects: ATTₜ = Y₀ₜ − Σᵢ wᵢ Yᵢₜ over post periods.
pub fn sc_att(panel: &PanelData, spec: PredictorSpec) -> Result<ScAtt> {
    let treated = panel.treated_unit()?;
    let controls = panel.control_indices();
    let weights = sc_weights(panel, spec)?;
    let mut att = Vec::with_capacity(panel.t1() + 1);
    for t in 0..=panel.t1() as i64 {
        let synth: f64 = controls
            .iter()
            .enumerate()
            .map(|(k, &i)| weights.weights[k] * panel.outcome(i, t))
            .sum();
        att.push(panel.outcome(treated, t) - synth);
    }
    Ok(ScAtt { att, weights })
}
