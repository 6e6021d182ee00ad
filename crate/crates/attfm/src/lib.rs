//! Treatment-effect estimation for short panels with one treated unit under
//! a linear factor model.
//!
//! The estimator recovers, for each post-treatment period, the linear map
//! from a unit's pre-treatment residualized outcomes to its period-t
//! residualized outcome, using nonlinear transformations of time-invariant
//! covariates as instruments. Plugging the treated unit's pre-treatment
//! history into that map yields the untreated counterfactual and hence the
//! treatment effect, without estimating factors or loadings themselves and
//! without a long pre-treatment window.
//!
//! Modules:
//! - [`panel`]: balanced-panel model, CSV ingestion, validation
//! - [`linalg`]: SVD pseudoinverse, Tikhonov inverse, PSD square root
//! - [`weights`]: Hermite weight functions with control-sample normalization
//! - [`estimator`]: first stage, moments, counterfactual, ATT
//! - [`tuning`]: delete-one CV and GCV selection of the ridge parameter
//! - [`baselines`]: DID and synthetic-control comparison estimators
//! - [`mc`]: simulation design and replicated-study harness
//! - [`quad`]: Gauss-Hermite quadrature for the design's centering constant

pub mod baselines;
pub mod error;
pub mod estimator;
pub mod linalg;
pub mod mc;
pub mod panel;
pub mod quad;
pub mod simplex;
pub mod tuning;
pub mod weights;

pub use error::{Error, Result};
pub use estimator::{
    estimate_att, DeltaRule, EstimateResult, EstimatorConfig, Variant, Weighting,
};
pub use panel::{load_panel_csv, load_panel_csv_path, validate, write_panel_csv, PanelData};
