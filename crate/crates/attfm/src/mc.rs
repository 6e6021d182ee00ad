//! Monte Carlo harness: the two-factor simulation design, a replicated
//! study runner with per-replication RNG substreams, and bias/sd/RMSE
//! summaries.
//!
//! Determinism: all randomness derives from `base_seed`. The factor values
//! are drawn once per study from substream 0 and held fixed across
//! replications; replication slot k, attempt a uses substream
//! `1 + k + (a << 32)`. Results are written into indexed slots and reduced
//! in slot order, so output is bit-identical regardless of thread count.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;
use std::io::Write;

use crate::baselines::{did_att, sc_att, PredictorSpec};
use crate::error::{Error, Result};
use crate::estimator::{estimate_att, DeltaRule, EstimatorConfig};
use crate::linalg;
use crate::panel::PanelData;
use crate::quad::centering_log1p_z4;

/// Replication attempts per slot before the study aborts.
const MAX_ATTEMPTS_PER_SLOT: u32 = 64;

/// Noise scales of the data-generating process. Defaults follow the
/// simulation design: ε ~ N(0,1), loading noise u ~ N(0, 0.2²).
#[derive(Debug, Clone, Copy, Serialize)]
pub struct NoiseScales {
    pub eps_sd: f64,
    pub loading_sd: f64,
    /// Idiosyncratic-noise scale for the treated unit; `None` uses `eps_sd`.
    /// Setting it to 0 exposes the estimator's sampling error alone.
    pub treated_eps_sd: Option<f64>,
}

impl Default for NoiseScales {
    fn default() -> Self {
        NoiseScales {
            eps_sd: 1.0,
            loading_sd: 0.2,
            treated_eps_sd: None,
        }
    }
}

impl NoiseScales {
    pub fn noiseless() -> Self {
        NoiseScales {
            eps_sd: 0.0,
            loading_sd: 0.0,
            treated_eps_sd: None,
        }
    }

    fn treated_sd(&self) -> f64 {
        self.treated_eps_sd.unwrap_or(self.eps_sd)
    }
}

/// A method entry in the study menu. Labels follow the usual simulation
/// table headings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum MethodSpec {
    /// Pseudoinverse variant, "R=k (no tuning)".
    FactorPinv { r: usize },
    /// Ridge variant with delete-one CV, "R=k (CV)".
    FactorRidgeCv { r: usize },
    /// Ridge variant with GCV, "R=k (GCV)".
    FactorRidgeGcv { r: usize },
    /// Ridge variant with a fixed δ, "R=k (fixed)".
    FactorRidgeFixed { r: usize, delta: f64 },
    Did,
    /// Synthetic control, predictors I (all pre-treatment lags).
    ScI,
    /// Synthetic control, predictors II (half of the lags plus covariates).
    ScII,
}

impl MethodSpec {
    pub fn label(&self) -> String {
        match self {
            MethodSpec::FactorPinv { r } => format!("R={r} (no tuning)"),
            MethodSpec::FactorRidgeCv { r } => format!("R={r} (CV)"),
            MethodSpec::FactorRidgeGcv { r } => format!("R={r} (GCV)"),
            MethodSpec::FactorRidgeFixed { r, .. } => format!("R={r} (fixed)"),
            MethodSpec::Did => "DID".to_string(),
            MethodSpec::ScI => "SCM-I".to_string(),
            MethodSpec::ScII => "SCM-II".to_string(),
        }
    }

    /// The paper-style default menu at R = 2 and 3.
    pub fn default_menu() -> Vec<MethodSpec> {
        vec![
            MethodSpec::FactorPinv { r: 2 },
            MethodSpec::FactorRidgeCv { r: 2 },
            MethodSpec::FactorRidgeGcv { r: 2 },
            MethodSpec::FactorRidgeCv { r: 3 },
            MethodSpec::FactorRidgeGcv { r: 3 },
            MethodSpec::Did,
            MethodSpec::ScI,
            MethodSpec::ScII,
        ]
    }

    fn estimate(&self, panel: &PanelData) -> Result<f64> {
        let att0 = |cfg: EstimatorConfig| -> Result<f64> {
            Ok(estimate_att(panel, &cfg)?.att[0])
        };
        match *self {
            MethodSpec::FactorPinv { r } => att0(EstimatorConfig::pinv(r)),
            MethodSpec::FactorRidgeCv { r } => att0(EstimatorConfig::ridge(r, DeltaRule::Cv)),
            MethodSpec::FactorRidgeGcv { r } => att0(EstimatorConfig::ridge(r, DeltaRule::Gcv)),
            MethodSpec::FactorRidgeFixed { r, delta } => {
                att0(EstimatorConfig::ridge(r, DeltaRule::Fixed(delta)))
            }
            MethodSpec::Did => Ok(did_att(panel)?[0]),
            MethodSpec::ScI => {
                let res = sc_att(panel, PredictorSpec::AllPreLags)?;
                if !res.weights.converged {
                    return Err(Error::numerical("synthetic control solver did not converge"));
                }
                Ok(res.att[0])
            }
            MethodSpec::ScII => {
                let res = sc_att(panel, PredictorSpec::HalfLagsAndCovariates)?;
                if !res.weights.converged {
                    return Err(Error::numerical("synthetic control solver did not converge"));
                }
                Ok(res.att[0])
            }
        }
    }
}

/// Study configuration.
#[derive(Debug, Clone, Serialize)]
pub struct McConfig {
    /// Pre-treatment periods T₀.
    pub t0: usize,
    /// Post periods beyond 0 (the simulation design uses T₁ = 0).
    pub t1: usize,
    /// Units including the treated one.
    pub n: usize,
    pub reps: usize,
    pub base_seed: u64,
    pub methods: Vec<MethodSpec>,
    pub noise: NoiseScales,
}

impl McConfig {
    pub fn new(t0: usize, n: usize, reps: usize, base_seed: u64) -> Self {
        McConfig {
            t0,
            t1: 0,
            n,
            reps,
            base_seed,
            methods: MethodSpec::default_menu(),
            noise: NoiseScales::default(),
        }
    }

    fn validate(&self) -> Result<()> {
        if self.reps == 0 {
            return Err(Error::validation("reps must be at least 1"));
        }
        if self.t0 == 0 {
            return Err(Error::validation("t0 must be at least 1"));
        }
        let max_r = self
            .methods
            .iter()
            .map(|m| match *m {
                MethodSpec::FactorPinv { r }
                | MethodSpec::FactorRidgeCv { r }
                | MethodSpec::FactorRidgeGcv { r }
                | MethodSpec::FactorRidgeFixed { r, .. } => r,
                _ => 0,
            })
            .max()
            .unwrap_or(0);
        if self.n < self.t0.max(max_r) + 2 {
            return Err(Error::validation(format!(
                "n = {} too small: need at least max(T0, R) + 2 = {}",
                self.n,
                self.t0.max(max_r) + 2
            )));
        }
        if self.methods.is_empty() {
            return Err(Error::validation("method menu is empty"));
        }
        Ok(())
    }

    fn rng_for_stream(&self, stream: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.base_seed);
        rng.set_stream(stream);
        rng
    }
}

/// Fixed factor values of one study, drawn from substream 0.
#[derive(Debug, Clone, Serialize)]
pub struct StudyFactors {
    /// F₁ₜ over t = −T₀..=T₁.
    pub f1: Vec<f64>,
    /// F₂ₜ over t = −T₀..=T₁.
    pub f2: Vec<f64>,
}

/// Draw the 2(T₀+T₁+1) fixed factor values for a study.
pub fn study_factors(config: &McConfig) -> StudyFactors {
    let mut rng = config.rng_for_stream(0);
    let n_periods = config.t0 + config.t1 + 1;
    let f1 = (0..n_periods).map(|_| rng.sample(StandardNormal)).collect();
    let f2 = (0..n_periods).map(|_| rng.sample(StandardNormal)).collect();
    StudyFactors { f1, f2 }
}

/// Latent state of one simulated panel.
#[derive(Debug, Clone)]
pub struct DgpTruth {
    pub lambda1: Vec<f64>,
    pub lambda2: Vec<f64>,
    pub f1: Vec<f64>,
    pub f2: Vec<f64>,
    pub b1: Vec<f64>,
    pub b2: Vec<f64>,
    /// Idiosyncratic errors, N × (T₀+T₁+1).
    pub eps: DMatrix<f64>,
    /// Untreated counterfactuals of the treated unit for t = 0..=T₁.
    pub treated_counterfactuals: Vec<f64>,
    /// Y₀₀(0), the t = 0 entry of the above.
    pub y00_counterfactual: f64,
    pub true_effect: f64,
}

/// Generate one panel from the two-factor design:
/// Yᵢₜ(0) = b₁ₜ + b₂ₜ Zᵢ + F₁ₜ λ₁ᵢ + F₂ₜ λ₂ᵢ + εᵢₜ with
/// b₁ₜ = (t−1)/T₀ + 1, b₂ₜ = ((t−1)/T₀)² + 1,
/// λ₁ᵢ = log(1+Zᵢ⁴) − E[log(1+Z⁴)] + u₁ᵢ,
/// λ₂ᵢ = 0.5(exp(−0.2Zᵢ) − E[exp(−0.2Z)]) + u₂ᵢ,
/// controls Zᵢ ~ N(0,1), treated Z₀ ~ N(1,1), and Y₀ₜ = 1 + Y₀ₜ(0) for
/// every post period. Unit 0 is the treated unit. Draw order is fixed:
/// z₀, z₁.., u₁ over units, u₂ over units, ε unit-major.
pub fn gen_dgp_panel(
    config: &McConfig,
    factors: &StudyFactors,
    stream: u64,
) -> Result<(PanelData, DgpTruth)> {
    let mut rng = config.rng_for_stream(stream);
    let n = config.n;
    let n_periods = config.t0 + config.t1 + 1;
    let c_log = centering_log1p_z4();
    let c_exp = (0.02f64).exp(); // E[exp(-0.2 Z)] = exp(0.2²/2)

    let mut z = vec![0.0f64; n];
    z[0] = rng.sample::<f64, _>(StandardNormal) + 1.0;
    for zi in z.iter_mut().skip(1) {
        *zi = rng.sample(StandardNormal);
    }
    let u1: Vec<f64> = (0..n)
        .map(|_| rng.sample::<f64, _>(StandardNormal) * config.noise.loading_sd)
        .collect();
    let u2: Vec<f64> = (0..n)
        .map(|_| rng.sample::<f64, _>(StandardNormal) * config.noise.loading_sd)
        .collect();
    let eps = DMatrix::from_fn(n, n_periods, |i, _| {
        let sd = if i == 0 {
            config.noise.treated_sd()
        } else {
            config.noise.eps_sd
        };
        rng.sample::<f64, _>(StandardNormal) * sd
    });

    let lambda1: Vec<f64> = (0..n)
        .map(|i| (1.0 + z[i].powi(4)).ln() - c_log + u1[i])
        .collect();
    let lambda2: Vec<f64> = (0..n)
        .map(|i| 0.5 * ((-0.2 * z[i]).exp() - c_exp) + u2[i])
        .collect();

    let t0 = config.t0 as i64;
    let times: Vec<i64> = (-t0..=config.t1 as i64).collect();
    let b1: Vec<f64> = times.iter().map(|&t| (t - 1) as f64 / config.t0 as f64 + 1.0).collect();
    let b2: Vec<f64> = times
        .iter()
        .map(|&t| ((t - 1) as f64 / config.t0 as f64).powi(2) + 1.0)
        .collect();

    let mut outcomes = DMatrix::<f64>::zeros(n, n_periods);
    for i in 0..n {
        for j in 0..n_periods {
            outcomes[(i, j)] = b1[j]
                + b2[j] * z[i]
                + factors.f1[j] * lambda1[i]
                + factors.f2[j] * lambda2[i]
                + eps[(i, j)];
        }
    }
    let mut treated_counterfactuals = Vec::with_capacity(config.t1 + 1);
    for t in 0..=config.t1 {
        let j = config.t0 + t;
        let y0 = outcomes[(0, j)];
        treated_counterfactuals.push(y0);
        outcomes[(0, j)] = 1.0 + y0;
    }

    let covariates = DMatrix::from_fn(n, 2, |i, c| if c == 0 { 1.0 } else { z[i] });
    let mut treated = vec![false; n];
    treated[0] = true;
    let ids = (0..n).map(|i| format!("u{i}")).collect();
    let panel = PanelData::new(outcomes, treated, covariates, config.t0, ids)?;

    let y00 = treated_counterfactuals[0];
    Ok((
        panel,
        DgpTruth {
            lambda1,
            lambda2,
            f1: factors.f1.clone(),
            f2: factors.f2.clone(),
            b1,
            b2,
            eps,
            treated_counterfactuals,
            y00_counterfactual: y00,
            true_effect: 1.0,
        },
    ))
}

/// bias = mean − truth, sd = sample standard deviation (n−1), and
/// rmse = √mean((est − truth)²); rmse² = bias² + sd²(n−1)/n.
pub fn summarize(estimates: &[f64], truth: f64) -> Result<(f64, f64, f64)> {
    if estimates.is_empty() {
        return Err(Error::validation("summarize needs at least one estimate"));
    }
    let n = estimates.len() as f64;
    let mean = estimates.iter().sum::<f64>() / n;
    let bias = mean - truth;
    let sd = if estimates.len() > 1 {
        (estimates.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    let rmse = (estimates.iter().map(|e| (e - truth).powi(2)).sum::<f64>() / n).sqrt();
    Ok((bias, sd, rmse))
}

/// One study method driven by the harness: a label and an estimator of the
/// period-0 treatment effect. `run` receives the panel and the replication
/// index; an error drops the replication for every method and redraws it.
pub struct StudyMethod {
    pub label: String,
    #[allow(clippy::type_complexity)]
    pub run: Box<dyn Fn(&PanelData, usize) -> Result<f64> + Send + Sync>,
}

impl StudyMethod {
    pub fn from_spec(spec: MethodSpec) -> StudyMethod {
        StudyMethod {
            label: spec.label(),
            run: Box::new(move |panel, _| spec.estimate(panel)),
        }
    }
}

/// Summary row of one method.
#[derive(Debug, Clone, Serialize)]
pub struct MethodSummary {
    pub label: String,
    pub bias: f64,
    pub sd: f64,
    pub rmse: f64,
}

/// Study output with full provenance.
#[derive(Debug, Clone, Serialize)]
pub struct McResult {
    pub schema: u32,
    pub t0: usize,
    pub n: usize,
    pub reps: usize,
    pub base_seed: u64,
    pub methods: Vec<MethodSummary>,
    /// Per-method, per-replication ATT estimates (slot order).
    pub estimates: Vec<Vec<f64>>,
    /// Replications discarded (and redrawn) because a method failed.
    pub dropped: usize,
    /// True when more than 10% of attempted replications were dropped.
    pub unreliable: bool,
    pub true_effect: f64,
    pub factors: StudyFactors,
    /// Singular values of the 2 × (T₀+T₁+1) factor-value matrix.
    pub factor_singular_values: Vec<f64>,
    pub noise: NoiseScales,
}

/// Run a replicated study with the configured method menu.
pub fn run_study(config: &McConfig) -> Result<McResult> {
    let methods: Vec<StudyMethod> = config
        .methods
        .iter()
        .map(|&spec| StudyMethod::from_spec(spec))
        .collect();
    run_study_with(config, &methods)
}

/// Replication slot: streams `1 + k + (attempt << 32)` until every method
/// succeeds.
fn run_slot(
    config: &McConfig,
    factors: &StudyFactors,
    methods: &[StudyMethod],
    k: usize,
) -> Result<(Vec<f64>, usize)> {
    let mut drops = 0usize;
    for attempt in 0..MAX_ATTEMPTS_PER_SLOT {
        let stream = 1 + k as u64 + ((attempt as u64) << 32);
        let (panel, _truth) = gen_dgp_panel(config, factors, stream)?;
        let mut row = Vec::with_capacity(methods.len());
        let mut failed = false;
        for method in methods {
            match (method.run)(&panel, k) {
                Ok(v) if v.is_finite() => row.push(v),
                _ => {
                    failed = true;
                    break;
                }
            }
        }
        if !failed {
            return Ok((row, drops));
        }
        drops += 1;
    }
    Err(Error::numerical(format!(
        "replication slot {k} failed {MAX_ATTEMPTS_PER_SLOT} consecutive draws"
    )))
}

/// [`run_study`] with an explicit method list (stubs, custom estimators).
pub fn run_study_with(config: &McConfig, methods: &[StudyMethod]) -> Result<McResult> {
    config.validate()?;
    if methods.is_empty() {
        return Err(Error::validation("method menu is empty"));
    }
    let factors = study_factors(config);

    let slots: Vec<Result<(Vec<f64>, usize)>> = (0..config.reps)
        .into_par_iter()
        .map(|k| run_slot(config, &factors, methods, k))
        .collect();

    let mut estimates = vec![Vec::with_capacity(config.reps); methods.len()];
    let mut dropped = 0usize;
    for slot in slots {
        let (row, drops) = slot?;
        dropped += drops;
        for (m, v) in row.into_iter().enumerate() {
            estimates[m].push(v);
        }
    }

    let truth = 1.0;
    let mut summaries = Vec::with_capacity(methods.len());
    for (m, method) in methods.iter().enumerate() {
        let (bias, sd, rmse) = summarize(&estimates[m], truth)?;
        summaries.push(MethodSummary {
            label: method.label.clone(),
            bias,
            sd,
            rmse,
        });
    }

    let f_matrix = DMatrix::from_fn(2, factors.f1.len(), |r, c| {
        if r == 0 {
            factors.f1[c]
        } else {
            factors.f2[c]
        }
    });
    let factor_singular_values = linalg::SvdFactors::new(&f_matrix)
        .singular_values
        .iter()
        .copied()
        .collect();

    let attempted = config.reps + dropped;
    Ok(McResult {
        schema: 1,
        t0: config.t0,
        n: config.n,
        reps: config.reps,
        base_seed: config.base_seed,
        methods: summaries,
        estimates,
        dropped,
        unreliable: dropped * 10 > attempted,
        true_effect: truth,
        factors,
        factor_singular_values,
        noise: config.noise,
    })
}

/// CSV rows `method,t0,n,bias,sd,rmse,reps,dropped`, one per method.
pub fn write_study_csv<W: Write>(result: &McResult, mut writer: W) -> Result<()> {
    writeln!(writer, "method,t0,n,bias,sd,rmse,reps,dropped")?;
    for m in &result.methods {
        writeln!(
            writer,
            "{},{},{},{},{},{},{},{}",
            m.label, result.t0, result.n, m.bias, m.sd, m.rmse, result.reps, result.dropped
        )?;
    }
    Ok(())
}

/// Full JSON report including per-replication estimates.
pub fn write_study_json<W: Write>(result: &McResult, writer: W) -> Result<()> {
    serde_json::to_writer_pretty(writer, result)
        .map_err(|e| Error::numerical(format!("json serialization failed: {e}")))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn summarize_trivial_cases() {
        let (b, s, r) = summarize(&[1.0, 1.0, 1.0], 1.0).unwrap();
        assert_eq!((b, s, r), (0.0, 0.0, 0.0));
        let (b, s, r) = summarize(&[0.0, 2.0], 1.0).unwrap();
        assert_relative_eq!(b, 0.0, epsilon = 1e-15);
        assert_relative_eq!(r, 1.0, epsilon = 1e-15);
        assert_relative_eq!(s, 2.0f64.sqrt(), epsilon = 1e-15);
        assert!(summarize(&[], 1.0).is_err());
    }

    #[test]
    fn summarize_matches_moment_identity_on_gaussian_draws() {
        let mut rng = ChaCha8Rng::seed_from_u64(60);
        let draws: Vec<f64> = (0..1000)
            .map(|_| 0.1 + 0.5 * rng.sample::<f64, _>(StandardNormal))
            .collect();
        let (bias, sd, rmse) = summarize(&draws, 0.0).unwrap();
        assert!((bias - 0.1).abs() < 0.06, "bias {bias}");
        assert!((sd - 0.5).abs() < 0.05, "sd {sd}");
        let expect_rmse = (0.1f64.powi(2) + 0.25).sqrt();
        assert!((rmse - expect_rmse).abs() < 0.05, "rmse {rmse}");
        // exact identity: rmse² = bias² + sd²(n−1)/n
        let n = draws.len() as f64;
        assert_relative_eq!(
            rmse * rmse,
            bias * bias + sd * sd * (n - 1.0) / n,
            epsilon = 1e-10
        );
    }

    #[test]
    fn dgp_invariants() {
        let config = McConfig::new(5, 40, 1, 123);
        let factors = study_factors(&config);
        assert_eq!(factors.f1.len(), 6);
        let (panel, truth) = gen_dgp_panel(&config, &factors, 1).unwrap();
        assert_eq!(panel.n_units(), 40);
        assert_eq!(panel.t0(), 5);
        assert_eq!(panel.t1(), 0);
        assert!(panel.treated_flags()[0]);
        // treatment wedge is exactly 1
        assert_eq!(panel.outcome(0, 0), 1.0 + truth.y00_counterfactual);
        assert_eq!(truth.true_effect, 1.0);
        // b-coefficients at t = 0 with T0 = 5: b1 = 0.8, b2 = 1.04
        assert_relative_eq!(truth.b1[5], 0.8, epsilon = 1e-15);
        assert_relative_eq!(truth.b2[5], 1.04, epsilon = 1e-15);
        // b at t = -5: b1 = -0.2, b2 = 2.44
        assert_relative_eq!(truth.b1[0], -0.2, epsilon = 1e-15);
        assert_relative_eq!(truth.b2[0], 2.44, epsilon = 1e-15);
    }

    #[test]
    fn dgp_noiseless_is_deterministic_function_of_z() {
        let mut config = McConfig::new(3, 12, 1, 7);
        config.noise = NoiseScales::noiseless();
        let factors = study_factors(&config);
        let (p1, t1) = gen_dgp_panel(&config, &factors, 1).unwrap();
        let (p2, t2) = gen_dgp_panel(&config, &factors, 1).unwrap();
        assert_eq!(p1.outcomes(), p2.outcomes());
        assert_eq!(t1.lambda1, t2.lambda1);
        assert_eq!(t1.eps.amax(), 0.0);
        // outcome reproducible from z alone
        let z = p1.covariates()[(3, 1)];
        let c_log = centering_log1p_z4();
        let c_exp = (0.02f64).exp();
        let l1 = (1.0 + z.powi(4)).ln() - c_log;
        let l2 = 0.5 * ((-0.2 * z).exp() - c_exp);
        let j = 1usize; // t = -2
        let expect = t1.b1[j] + t1.b2[j] * z + factors.f1[j] * l1 + factors.f2[j] * l2;
        assert_relative_eq!(p1.outcomes()[(3, j)], expect, epsilon = 1e-12);
    }

    #[test]
    fn stub_constant_estimator_gives_zero_error() {
        let config = McConfig::new(2, 10, 8, 99);
        let methods = vec![StudyMethod {
            label: "const".into(),
            run: Box::new(|_, _| Ok(1.0)),
        }];
        let res = run_study_with(&config, &methods).unwrap();
        assert_eq!(res.methods[0].bias, 0.0);
        assert_eq!(res.methods[0].sd, 0.0);
        assert_eq!(res.methods[0].rmse, 0.0);
        assert_eq!(res.dropped, 0);
        assert!(!res.unreliable);
    }

    #[test]
    fn stub_ramp_estimator_matches_closed_form() {
        let reps = 16usize;
        let config = McConfig::new(2, 10, reps, 99);
        let methods = vec![StudyMethod {
            label: "ramp".into(),
            run: Box::new(move |_, k| Ok(1.0 + k as f64 / reps as f64)),
        }];
        let res = run_study_with(&config, &methods).unwrap();
        // estimates 1 + k/n for k = 0..n-1: mean error = (n-1)/(2n)
        let n = reps as f64;
        let mean_err = (n - 1.0) / (2.0 * n);
        assert_relative_eq!(res.methods[0].bias, mean_err, epsilon = 1e-12);
        // population variance of k/n over k = 0..n-1: (n²−1)/(12n²)
        let var = (n * n - 1.0) / (12.0 * n * n);
        let sample_sd = (var * n / (n - 1.0)).sqrt();
        assert_relative_eq!(res.methods[0].sd, sample_sd, epsilon = 1e-12);
        assert_relative_eq!(
            res.methods[0].rmse,
            (mean_err * mean_err + var).sqrt(),
            epsilon = 1e-12
        );
    }

    #[test]
    fn identical_seeds_reproduce_bitwise() {
        let config = McConfig::new(3, 14, 6, 2024);
        let a = run_study(&config).unwrap();
        let b = run_study(&config).unwrap();
        assert_eq!(a.estimates, b.estimates);
        let mut csv_a = Vec::new();
        let mut csv_b = Vec::new();
        write_study_csv(&a, &mut csv_a).unwrap();
        write_study_csv(&b, &mut csv_b).unwrap();
        assert_eq!(csv_a, csv_b);
    }

    #[test]
    fn factor_values_fixed_across_replications() {
        let config = McConfig::new(3, 14, 2, 5);
        let factors = study_factors(&config);
        let (_, t1) = gen_dgp_panel(&config, &factors, 1).unwrap();
        let (_, t2) = gen_dgp_panel(&config, &factors, 2).unwrap();
        assert_eq!(t1.f1, t2.f1);
        assert_eq!(t1.f2, t2.f2);
        // while the panels differ
        assert_ne!(t1.lambda1, t2.lambda1);
    }

    #[test]
    fn dropped_replications_flag_unreliable() {
        // a method that fails on most draws forces redraws
        let config = McConfig::new(2, 10, 4, 77);
        let methods = vec![StudyMethod {
            label: "flaky".into(),
            run: Box::new(|panel, _| {
                // fail whenever the treated covariate is above its median-ish
                if panel.covariates()[(0, 1)] > 0.8 {
                    Err(Error::numerical("synthetic failure"))
                } else {
                    Ok(1.0)
                }
            }),
        }];
        let res = run_study_with(&config, &methods).unwrap();
        assert_eq!(res.estimates[0].len(), 4);
        assert!(res.dropped > 0);
        let attempted = res.reps + res.dropped;
        assert_eq!(res.unreliable, res.dropped * 10 > attempted);
    }
}
