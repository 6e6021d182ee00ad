//! The factor-model counterfactual estimator for one treated unit.
//!
//! Pipeline: per-period cross-sectional regressions on the control units
//! (`estimate_beta`), residualization of every unit against those
//! coefficients (`residualize`), correlation of nonlinear covariate
//! transformations with residualized outcomes (`build_moments`), recovery of
//! the linear map from pre-period residuals to a post-period residual
//! (`f_star_pinv` / `f_star_ridge`), and the counterfactual
//!
//!   Ŷ₀ₜ(0) = F̂ₜ*' (Y₀,pre − β̂' Z₀) + β̂ₜ' Z₀.
//!
//! All pre-period vectors and moment columns are ordered (t = −1, …, −T₀).

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg;
use crate::panel::{PanelData, GRAM_CONDITION_LIMIT};
use crate::tuning;
use crate::weights::{hermite_weights, WeightFunctionSet};

/// Per-period cross-sectional coefficients β̂ₜ fit on control units.
#[derive(Debug, Clone)]
pub struct BetaHat {
    /// d × (T₀+T₁+1); column j holds β̂ for period t = j − T₀.
    coeffs: DMatrix<f64>,
    t0: usize,
    t1: usize,
    gram_condition: f64,
}

impl BetaHat {
    pub fn t0(&self) -> usize {
        self.t0
    }

    pub fn t1(&self) -> usize {
        self.t1
    }

    pub fn gram_condition(&self) -> f64 {
        self.gram_condition
    }

    /// β̂ₜ for a period t in −T₀..=T₁.
    pub fn beta_at(&self, t: i64) -> DVector<f64> {
        let j = (t + self.t0 as i64) as usize;
        self.coeffs.column(j).into_owned()
    }

    /// Pre-period block (β̂₋₁, …, β̂₋T₀) as a d × T₀ matrix.
    pub fn pre_block(&self) -> DMatrix<f64> {
        let d = self.coeffs.nrows();
        DMatrix::from_fn(d, self.t0, |i, s| self.coeffs[(i, self.t0 - 1 - s)])
    }

    /// Fitted values β̂ₜ'z for every pre period, ordered (t=−1, …, −T₀).
    pub fn pre_fitted(&self, z: &DVector<f64>) -> DVector<f64> {
        DVector::from_fn(self.t0, |s, _| self.beta_at(-(s as i64) - 1).dot(z))
    }
}

/// Residuals ξ̂ᵢₜ = Yᵢₜ − β̂ₜ'Zᵢ for every unit and period.
///
/// Treated-unit post-period residuals are included but contain the
/// treatment effect; only pre-period treated residuals feed the estimator.
#[derive(Debug, Clone)]
pub struct ResidualizedPanel {
    /// N × (T₀+T₁+1), same column layout as the panel.
    xi: DMatrix<f64>,
    t0: usize,
    t1: usize,
}

impl ResidualizedPanel {
    pub fn xi(&self) -> &DMatrix<f64> {
        &self.xi
    }

    pub fn t0(&self) -> usize {
        self.t0
    }

    pub fn t1(&self) -> usize {
        self.t1
    }

    pub fn xi_at(&self, unit: usize, t: i64) -> f64 {
        self.xi[(unit, (t + self.t0 as i64) as usize)]
    }

    /// Pre-period residual vector of `unit`, ordered (t=−1, …, −T₀).
    pub fn pre_vector(&self, unit: usize) -> DVector<f64> {
        DVector::from_fn(self.t0, |s, _| self.xi[(unit, self.t0 - 1 - s)])
    }
}

/// Sample moment objects: Ω̂ (R × T₀, columns ordered t=−1..−T₀) and the
/// post-period vectors Ω̂ₜ for t = 0..=T₁.
#[derive(Debug, Clone)]
pub struct MomentSet {
    omega_pre: DMatrix<f64>,
    omega_post: Vec<DVector<f64>>,
    /// Singular values of Ω̂ (identity weighting), descending.
    singular_values: Vec<f64>,
}

impl MomentSet {
    pub fn omega_pre(&self) -> &DMatrix<f64> {
        &self.omega_pre
    }

    /// Ω̂ₜ for post period t (0-based into 0..=T₁).
    pub fn omega_post(&self, t: usize) -> &DVector<f64> {
        &self.omega_post[t]
    }

    pub fn n_post(&self) -> usize {
        self.omega_post.len()
    }

    pub fn r_weights(&self) -> usize {
        self.omega_pre.nrows()
    }

    pub fn t0(&self) -> usize {
        self.omega_pre.ncols()
    }

    pub fn singular_values(&self) -> &[f64] {
        &self.singular_values
    }

    /// Assemble a moment set from raw matrices (externally computed moments
    /// or synthetic instances); `omega_post[t]` must have R entries each.
    pub fn from_raw(omega_pre: DMatrix<f64>, omega_post: Vec<DVector<f64>>) -> Result<Self> {
        if omega_post.is_empty() {
            return Err(Error::validation("from_raw needs at least one post-period vector"));
        }
        if omega_post.iter().any(|v| v.len() != omega_pre.nrows()) {
            return Err(Error::validation("omega_post dimension does not match R"));
        }
        let singular_values = linalg::SvdFactors::new(&omega_pre)
            .singular_values
            .iter()
            .copied()
            .collect();
        Ok(MomentSet {
            omega_pre,
            omega_post,
            singular_values,
        })
    }
}

/// Weighting matrix W for the moment conditions.
#[derive(Debug, Clone, Default)]
pub enum Weighting {
    #[default]
    Identity,
    /// User-supplied symmetric PSD R × R matrix.
    Matrix(DMatrix<f64>),
}

impl Weighting {
    /// W^{1/2} of the correct dimension (identity for the default).
    pub fn sqrt_matrix(&self, r: usize) -> Result<DMatrix<f64>> {
        match self {
            Weighting::Identity => Ok(DMatrix::identity(r, r)),
            Weighting::Matrix(w) => {
                if w.nrows() != r || w.ncols() != r {
                    return Err(Error::validation(format!(
                        "weighting matrix must be {r}x{r}, got {}x{}",
                        w.nrows(),
                        w.ncols()
                    )));
                }
                linalg::psd_sqrt(w)
            }
        }
    }
}

/// Rule for choosing the ridge tuning parameter δ.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DeltaRule {
    Fixed(f64),
    Cv,
    Gcv,
}

/// Estimator variant: direct pseudoinverse, or Tikhonov-regularized with a
/// δ-selection rule. The type makes "ridge requires a δ rule; pinv forbids
/// one" structural.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Variant {
    Pinv,
    Ridge(DeltaRule),
}

/// Full estimator configuration.
#[derive(Debug, Clone)]
pub struct EstimatorConfig {
    pub variant: Variant,
    /// Number of weight functions R.
    pub r_weights: usize,
    pub weighting: Weighting,
    /// Relative singular-value cutoff for the pseudoinverse;
    /// `None` uses max(R, T₀)·ε.
    pub rank_tol: Option<f64>,
}

impl EstimatorConfig {
    pub fn pinv(r_weights: usize) -> Self {
        EstimatorConfig {
            variant: Variant::Pinv,
            r_weights,
            weighting: Weighting::Identity,
            rank_tol: None,
        }
    }

    pub fn ridge(r_weights: usize, rule: DeltaRule) -> Self {
        EstimatorConfig {
            variant: Variant::Ridge(rule),
            r_weights,
            weighting: Weighting::Identity,
            rank_tol: None,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.r_weights == 0 {
            return Err(Error::validation("r_weights must be at least 1"));
        }
        if let Variant::Ridge(DeltaRule::Fixed(d)) = self.variant {
            if !(d > 0.0) {
                return Err(Error::validation(format!("fixed delta must be positive, got {d}")));
            }
        }
        if let Some(tol) = self.rank_tol {
            if tol < 0.0 {
                return Err(Error::validation("rank_tol must be nonnegative"));
            }
        }
        Ok(())
    }
}

/// Numerical context reported alongside the estimates.
#[derive(Debug, Clone)]
pub struct Diagnostics {
    /// Singular values of Ŵ^{1/2} Ω̂, descending.
    pub singular_values: Vec<f64>,
    pub gram_condition: f64,
    pub warnings: Vec<String>,
}

/// Counterfactuals, treatment effects, and the recovered maps per post
/// period t = 0..=T₁. `att[t] + counterfactual[t]` reproduces the observed
/// treated outcome exactly.
#[derive(Debug, Clone)]
pub struct EstimateResult {
    pub counterfactual: Vec<f64>,
    pub att: Vec<f64>,
    pub f_star: Vec<DVector<f64>>,
    /// δ actually used per post period (ridge variant only).
    pub delta_used: Option<Vec<f64>>,
    pub diagnostics: Diagnostics,
}

/// Per-period control-unit regressions β̂ₜ = Ĝ⁻¹ (1/N₀) Σ Zᵢ Yᵢₜ for every
/// observed period (controls stay untreated throughout, so post periods are
/// usable too).
pub fn estimate_beta(panel: &PanelData) -> Result<BetaHat> {
    let controls = panel.control_indices();
    let n0 = controls.len();
    let d = panel.n_covariates();
    if n0 < d {
        return Err(Error::validation(format!(
            "need at least d = {d} control units to fit the Gram matrix, got {n0}"
        )));
    }
    let gram = panel.control_gram();
    let svd = linalg::SvdFactors::new(&gram);
    let smax = svd.sigma_max();
    let smin = svd.singular_values.iter().copied().fold(f64::INFINITY, f64::min);
    let condition = if smin > 0.0 { smax / smin } else { f64::INFINITY };
    if !condition.is_finite() || condition > GRAM_CONDITION_LIMIT {
        return Err(Error::numerical(format!(
            "singular control covariate Gram matrix (condition {condition:.3e})"
        )));
    }
    let lu = gram.lu();

    let n_periods = panel.n_periods();
    let mut coeffs = DMatrix::<f64>::zeros(d, n_periods);
    for j in 0..n_periods {
        let mut rhs = DVector::<f64>::zeros(d);
        for &i in &controls {
            let y = panel.outcomes()[(i, j)];
            for k in 0..d {
                rhs[k] += panel.covariates()[(i, k)] * y;
            }
        }
        rhs /= n0 as f64;
        let beta = lu
            .solve(&rhs)
            .ok_or_else(|| Error::numerical("Gram solve failed"))?;
        coeffs.set_column(j, &beta);
    }
    Ok(BetaHat {
        coeffs,
        t0: panel.t0(),
        t1: panel.t1(),
        gram_condition: condition,
    })
}

/// ξ̂ᵢₜ = Yᵢₜ − β̂ₜ'Zᵢ for every unit (treated included).
pub fn residualize(panel: &PanelData, beta: &BetaHat) -> Result<ResidualizedPanel> {
    if beta.coeffs.nrows() != panel.n_covariates()
        || beta.t0 != panel.t0()
        || beta.t1 != panel.t1()
    {
        return Err(Error::validation("beta was fit on a panel of different shape"));
    }
    let fitted = panel.covariates() * &beta.coeffs;
    Ok(ResidualizedPanel {
        xi: panel.outcomes() - fitted,
        t0: panel.t0(),
        t1: panel.t1(),
    })
}

/// Sample moments over control units:
/// Ω̂[j, s−1] = (1/N₀) Σᵢ ω_j(Zᵢ) ξ̂ᵢ,₋ₛ and Ω̂ₜ[j] = (1/N₀) Σᵢ ω_j(Zᵢ) ξ̂ᵢₜ.
pub fn build_moments(
    resid: &ResidualizedPanel,
    weights: &WeightFunctionSet,
    panel: &PanelData,
) -> Result<MomentSet> {
    if resid.t0 != panel.t0() || resid.t1 != panel.t1() {
        return Err(Error::validation("residuals do not match the panel shape"));
    }
    let controls = panel.control_indices();
    let n0 = controls.len() as f64;
    let r = weights.count();
    let t0 = panel.t0();
    let t1 = panel.t1();

    // check the weights were normalized on this panel's controls
    {
        let mut mean = DVector::<f64>::zeros(r);
        for &i in &controls {
            mean += weights.evaluate(&panel.covariate_row(i));
        }
        mean /= n0;
        if mean.amax() > 1e-8 {
            return Err(Error::validation(
                "weight functions are not normalized over this panel's control units",
            ));
        }
    }

    let mut omega_pre = DMatrix::<f64>::zeros(r, t0);
    let mut omega_post = vec![DVector::<f64>::zeros(r); t1 + 1];
    for &i in &controls {
        let w = weights.evaluate(&panel.covariate_row(i));
        for s in 1..=t0 {
            let xi = resid.xi_at(i, -(s as i64));
            for j in 0..r {
                omega_pre[(j, s - 1)] += w[j] * xi;
            }
        }
        for t in 0..=t1 {
            let xi = resid.xi_at(i, t as i64);
            for j in 0..r {
                omega_post[t][j] += w[j] * xi;
            }
        }
    }
    omega_pre /= n0;
    for v in &mut omega_post {
        *v /= n0;
    }
    if omega_pre.iter().any(|v| !v.is_finite())
        || omega_post.iter().any(|v| v.iter().any(|x| !x.is_finite()))
    {
        return Err(Error::numerical("non-finite moment entries"));
    }

    let singular_values = linalg::SvdFactors::new(&omega_pre)
        .singular_values
        .iter()
        .copied()
        .collect();
    Ok(MomentSet {
        omega_pre,
        omega_post,
        singular_values,
    })
}

fn weighted_moments(
    moments: &MomentSet,
    weighting: &Weighting,
    t: usize,
) -> Result<(DMatrix<f64>, DVector<f64>)> {
    if t >= moments.n_post() {
        return Err(Error::validation(format!(
            "post period {t} out of range 0..={}",
            moments.n_post() - 1
        )));
    }
    match weighting {
        Weighting::Identity => Ok((moments.omega_pre.clone(), moments.omega_post[t].clone())),
        Weighting::Matrix(_) => {
            let wh = weighting.sqrt_matrix(moments.r_weights())?;
            Ok((&wh * &moments.omega_pre, &wh * &moments.omega_post[t]))
        }
    }
}

/// F̂ₜ* = (Ŵ^{1/2} Ω̂)⁺ Ŵ^{1/2} Ω̂ₜ, the pseudoinverse recovery intended for
/// R = r or T₀ = r. Always computable; see [`rank_warning`] for the
/// diagnostic when Ω̂ looks rank deficient.
pub fn f_star_pinv(
    moments: &MomentSet,
    weighting: &Weighting,
    t: usize,
    rank_tol: Option<f64>,
) -> Result<DVector<f64>> {
    let (a, at) = weighted_moments(moments, weighting, t)?;
    Ok(linalg::svd_pinv(&a, rank_tol) * at)
}

/// Singular-value profile warning when the numerical rank of Ŵ^{1/2}Ω̂ is
/// below min(R, T₀); `None` when the matrix has full numerical rank.
pub fn rank_warning(
    moments: &MomentSet,
    weighting: &Weighting,
    rank_tol: Option<f64>,
) -> Result<Option<String>> {
    let wh = weighting.sqrt_matrix(moments.r_weights())?;
    let a = &wh * &moments.omega_pre;
    let svd = linalg::SvdFactors::new(&a);
    let tol = rank_tol.unwrap_or_else(|| linalg::default_rank_tol(&a));
    let rank = svd.numerical_rank(tol);
    let full = moments.r_weights().min(moments.t0());
    if rank < full {
        let profile: Vec<String> = svd
            .singular_values
            .iter()
            .map(|s| format!("{s:.6e}"))
            .collect();
        Ok(Some(format!(
            "weighted moment matrix has numerical rank {rank} < min(R, T0) = {full}; \
             singular values [{}]; the ridge variant is recommended",
            profile.join(", ")
        )))
    } else {
        Ok(None)
    }
}

/// F̃ₜ* = (Ω̂'ŴΩ̂ + δ I)⁻¹ Ω̂'ŴΩ̂ₜ, the Tikhonov-regularized recovery for
/// unknown factor count; satisfies Ω̂'Ŵ(Ω̂F̃ₜ* − Ω̂ₜ) + δF̃ₜ* = 0.
pub fn f_star_ridge(
    moments: &MomentSet,
    weighting: &Weighting,
    delta: f64,
    t: usize,
) -> Result<DVector<f64>> {
    if !(delta > 0.0) {
        return Err(Error::validation(format!("delta must be positive, got {delta}")));
    }
    let (a, at) = weighted_moments(moments, weighting, t)?;
    Ok(linalg::tikhonov_inverse(&a, delta)? * at)
}

/// Scalar counterfactual Ŷ₀ₜ(0) = F̂ₜ*'(Y₀,pre − β̂'Z₀) + β̂ₜ'Z₀ for the
/// treated unit at post period `t` (f_star ordered t=−1 first).
pub fn counterfactual(
    panel: &PanelData,
    beta: &BetaHat,
    f_star: &DVector<f64>,
    t: usize,
) -> Result<f64> {
    if f_star.len() != panel.t0() {
        return Err(Error::validation(format!(
            "f_star has length {} but T0 = {}",
            f_star.len(),
            panel.t0()
        )));
    }
    if t > panel.t1() {
        return Err(Error::validation(format!(
            "post period {t} out of range 0..={}",
            panel.t1()
        )));
    }
    let treated = panel.treated_unit()?;
    let z0 = panel.covariate_row(treated);
    let y_pre = panel.pre_period_outcomes(treated);
    let fitted_pre = beta.pre_fitted(&z0);
    Ok(f_star.dot(&(y_pre - fitted_pre)) + beta.beta_at(t as i64).dot(&z0))
}

/// Run the whole pipeline for every post period t = 0..=T₁.
pub fn estimate_att(panel: &PanelData, config: &EstimatorConfig) -> Result<EstimateResult> {
    config.validate()?;
    let treated = panel.treated_unit()?;
    let n0 = panel.n_controls();
    let floor = panel.n_covariates().max(config.r_weights).max(panel.t0());
    if n0 < floor + 1 {
        return Err(Error::validation(format!(
            "need at least max(d, R, T0) + 1 = {} control units, got {n0}",
            floor + 1
        )));
    }

    let beta = estimate_beta(panel)?;
    let resid = residualize(panel, &beta)?;
    let weights = hermite_weights(config.r_weights, panel)?;
    let moments = build_moments(&resid, &weights, panel)?;

    let wh = config.weighting.sqrt_matrix(config.r_weights)?;
    let weighted = &wh * moments.omega_pre();
    let weighted_svd = linalg::SvdFactors::new(&weighted);
    let mut warnings = Vec::new();

    let mut counterfactuals = Vec::with_capacity(panel.t1() + 1);
    let mut atts = Vec::with_capacity(panel.t1() + 1);
    let mut f_stars = Vec::with_capacity(panel.t1() + 1);
    let mut deltas = Vec::new();

    for t in 0..=panel.t1() {
        let f_star = match config.variant {
            Variant::Pinv => f_star_pinv(&moments, &config.weighting, t, config.rank_tol)?,
            Variant::Ridge(rule) => {
                let delta = match rule {
                    DeltaRule::Fixed(d) => d,
                    DeltaRule::Cv => {
                        let sel = tuning::select_delta_cv(panel, config, t)?;
                        if sel.skipped_folds > 0 {
                            warnings.push(format!(
                                "cv at t={t}: skipped {} singular leave-one-out folds",
                                sel.skipped_folds
                            ));
                        }
                        sel.chosen
                    }
                    DeltaRule::Gcv => {
                        tuning::select_delta_gcv(&moments, &config.weighting, t)?.chosen
                    }
                };
                deltas.push(delta);
                f_star_ridge(&moments, &config.weighting, delta, t)?
            }
        };
        let y_hat = counterfactual(panel, &beta, &f_star, t)?;
        let observed = panel.outcome(treated, t as i64);
        counterfactuals.push(y_hat);
        atts.push(observed - y_hat);
        f_stars.push(f_star);
    }

    if matches!(config.variant, Variant::Pinv) {
        if let Some(w) = rank_warning(&moments, &config.weighting, config.rank_tol)? {
            warnings.push(w);
        }
    }

    Ok(EstimateResult {
        counterfactual: counterfactuals,
        att: atts,
        f_star: f_stars,
        delta_used: if matches!(config.variant, Variant::Ridge(_)) {
            Some(deltas)
        } else {
            None
        },
        diagnostics: Diagnostics {
            singular_values: weighted_svd.singular_values.iter().copied().collect(),
            gram_condition: beta.gram_condition(),
            warnings,
        },
    })
}
