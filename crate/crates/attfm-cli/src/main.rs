//! `attfm` — factor-model treatment-effect estimation for short panels.
//!
//! Subcommands: `estimate` (counterfactual + ATT report from a panel CSV),
//! `simulate` (replicated simulation study with CSV/JSON output), and
//! `inspect` (moment-matrix diagnostics and a variant suggestion).
//!
//! Exit codes: 0 success, 2 validation/input error, 3 numerical failure,
//! 4 unreliable simulation study.

mod config;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use attfm::estimator::{
    build_moments, estimate_att, estimate_beta, residualize, DeltaRule, EstimatorConfig, Variant,
    Weighting,
};
use attfm::linalg;
use attfm::mc::{run_study, McConfig, MethodSpec, NoiseScales};
use attfm::panel::{load_panel_csv_path, validate, PanelData};
use attfm::weights::hermite_weights;
use attfm::Error;

use config::FileConfig;

/// Spectral-gap floor below which `inspect` recommends the ridge variant.
const GAP_RATIO_FLOOR: f64 = 1e-8;

#[derive(Parser)]
#[command(name = "attfm", version, about = "Factor-model ATT estimation for short panels")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Estimate per-period counterfactuals and treatment effects on a panel CSV
    Estimate(EstimateArgs),
    /// Run a replicated simulation study over the built-in design
    Simulate(SimulateArgs),
    /// Report moment-matrix diagnostics and suggest an estimator variant
    Inspect(InspectArgs),
}

#[derive(Args)]
struct CommonArgs {
    /// Flat key-value config file; flags override file entries
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct EstimateArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Panel CSV (header `unit,time,treated,y,z1..zd`)
    #[arg(long)]
    input: Option<PathBuf>,
    /// JSON report path (stdout when omitted)
    #[arg(long)]
    output: Option<PathBuf>,
    /// Estimator variant: pinv | ridge
    #[arg(long)]
    variant: Option<String>,
    /// Number of weight functions
    #[arg(long = "R")]
    r_weights: Option<usize>,
    /// Ridge tuning rule: cv | gcv | <positive number>
    #[arg(long)]
    delta: Option<String>,
    /// Weighting matrix: identity | path to a headerless RxR CSV
    #[arg(long)]
    weights: Option<String>,
    /// Restrict the report to one post period
    #[arg(long = "t-post")]
    t_post: Option<usize>,
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Pre-treatment periods
    #[arg(long)]
    t0: Option<usize>,
    /// Number of units including the treated one
    #[arg(long)]
    n: Option<usize>,
    /// Replications
    #[arg(long)]
    reps: Option<usize>,
    /// Base seed; all randomness derives from it
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads (default: logical cores); output does not depend on it
    #[arg(long)]
    jobs: Option<usize>,
    /// Method menu, e.g. `pinv:2,cv:2,gcv:2,cv:3,gcv:3,did,sc1,sc2`
    #[arg(long)]
    methods: Option<String>,
    /// Output prefix; writes <prefix>.csv and <prefix>.json
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct InspectArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Panel CSV (header `unit,time,treated,y,z1..zd`)
    #[arg(long)]
    input: Option<PathBuf>,
    /// Number of weight functions
    #[arg(long = "R")]
    r_weights: Option<usize>,
    /// Weighting matrix: identity | path to a headerless RxR CSV
    #[arg(long)]
    weights: Option<String>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Estimate(args) => cmd_estimate(args),
        Command::Simulate(args) => cmd_simulate(args),
        Command::Inspect(args) => cmd_inspect(args),
    };
    match outcome {
        Ok(code) => code,
        Err(err) => {
            eprintln!("attfm: {err}");
            match err {
                Error::Numerical(_) => ExitCode::from(3),
                _ => ExitCode::from(2),
            }
        }
    }
}

fn file_config(common: &CommonArgs) -> attfm::Result<FileConfig> {
    match &common.config {
        Some(path) => FileConfig::load(path),
        None => Ok(FileConfig::default()),
    }
}

fn parse_weighting(spec: Option<&str>) -> attfm::Result<Weighting> {
    match spec {
        None | Some("identity") => Ok(Weighting::Identity),
        Some(path) => {
            let text = std::fs::read_to_string(path)?;
            let mut rows: Vec<Vec<f64>> = Vec::new();
            for line in text.lines().filter(|l| !l.trim().is_empty()) {
                let row: std::result::Result<Vec<f64>, _> =
                    line.split(',').map(|v| v.trim().parse::<f64>()).collect();
                rows.push(row.map_err(|_| {
                    Error::validation(format!("weights file {path}: non-numeric entry"))
                })?);
            }
            if rows.is_empty() || rows.iter().any(|r| r.len() != rows.len()) {
                return Err(Error::validation(format!(
                    "weights file {path}: expected a square numeric matrix"
                )));
            }
            let n = rows.len();
            let m = nalgebra::DMatrix::from_fn(n, n, |i, j| rows[i][j]);
            Ok(Weighting::Matrix(m))
        }
    }
}

fn parse_variant(
    variant: Option<&str>,
    delta: Option<&str>,
) -> attfm::Result<Variant> {
    let variant = variant.unwrap_or("pinv");
    match variant {
        "pinv" => {
            if delta.is_some() {
                return Err(Error::validation(
                    "--delta only applies to the ridge variant",
                ));
            }
            Ok(Variant::Pinv)
        }
        "ridge" => {
            let rule = match delta {
                None => {
                    return Err(Error::validation(
                        "the ridge variant requires --delta (cv, gcv, or a positive number)",
                    ))
                }
                Some("cv") => DeltaRule::Cv,
                Some("gcv") => DeltaRule::Gcv,
                Some(raw) => {
                    let value: f64 = raw.parse().map_err(|_| {
                        Error::validation(format!("--delta must be cv, gcv, or a number, got `{raw}`"))
                    })?;
                    if !(value > 0.0) {
                        return Err(Error::validation("--delta must be positive"));
                    }
                    DeltaRule::Fixed(value)
                }
            };
            Ok(Variant::Ridge(rule))
        }
        other => Err(Error::validation(format!(
            "unknown variant `{other}` (expected pinv or ridge)"
        ))),
    }
}

fn load_input(input: Option<&Path>) -> attfm::Result<PanelData> {
    let path = input.ok_or_else(|| Error::validation("--input is required"))?;
    load_panel_csv_path(path)
}

#[derive(Serialize)]
struct EstimateReport<'a> {
    schema: u32,
    input: String,
    variant: &'a str,
    r_weights: usize,
    delta_rule: Option<String>,
    n_units: usize,
    n_controls: usize,
    t0: usize,
    t1: usize,
    t_post: Option<usize>,
    att: Vec<f64>,
    counterfactual: Vec<f64>,
    f_star: Vec<Vec<f64>>,
    delta: Option<Vec<f64>>,
    diagnostics: ReportDiagnostics,
}

#[derive(Serialize)]
struct ReportDiagnostics {
    singular_values: Vec<f64>,
    gram_condition: f64,
    warnings: Vec<String>,
}

fn cmd_estimate(args: EstimateArgs) -> attfm::Result<ExitCode> {
    let file = file_config(&args.common)?;
    let input = file.merge(args.input, "input")?;
    let output = file.merge(args.output, "output")?;
    let variant_raw: Option<String> = file.merge(args.variant, "variant")?;
    let r_weights = file.merge(args.r_weights, "r")?.unwrap_or(2);
    let delta_raw: Option<String> = file.merge(args.delta, "delta")?;
    let weights_raw: Option<String> = file.merge(args.weights, "weights")?;
    let t_post = file.merge(args.t_post, "t-post")?;

    let panel = load_input(input.as_deref())?;
    let variant = parse_variant(variant_raw.as_deref(), delta_raw.as_deref())?;
    let config = EstimatorConfig {
        variant,
        r_weights,
        weighting: parse_weighting(weights_raw.as_deref())?,
        rank_tol: None,
    };
    let result = estimate_att(&panel, &config)?;

    if let Some(t) = t_post {
        if t > panel.t1() {
            return Err(Error::validation(format!(
                "--t-post {t} out of range 0..={}",
                panel.t1()
            )));
        }
    }
    let keep: Vec<usize> = match t_post {
        Some(t) => vec![t],
        None => (0..=panel.t1()).collect(),
    };
    let pick = |v: &[f64]| keep.iter().map(|&t| v[t]).collect::<Vec<f64>>();

    let report = EstimateReport {
        schema: 1,
        input: input.unwrap().display().to_string(),
        variant: match config.variant {
            Variant::Pinv => "pinv",
            Variant::Ridge(_) => "ridge",
        },
        r_weights,
        delta_rule: match config.variant {
            Variant::Pinv => None,
            Variant::Ridge(DeltaRule::Cv) => Some("cv".into()),
            Variant::Ridge(DeltaRule::Gcv) => Some("gcv".into()),
            Variant::Ridge(DeltaRule::Fixed(v)) => Some(v.to_string()),
        },
        n_units: panel.n_units(),
        n_controls: panel.n_controls(),
        t0: panel.t0(),
        t1: panel.t1(),
        t_post,
        att: pick(&result.att),
        counterfactual: pick(&result.counterfactual),
        f_star: keep
            .iter()
            .map(|&t| result.f_star[t].iter().copied().collect())
            .collect(),
        delta: result.delta_used.as_ref().map(|d| pick(d)),
        diagnostics: ReportDiagnostics {
            singular_values: result.diagnostics.singular_values.clone(),
            gram_condition: result.diagnostics.gram_condition,
            warnings: result.diagnostics.warnings.clone(),
        },
    };

    let json = serde_json::to_string_pretty(&report)
        .map_err(|e| Error::numerical(format!("report serialization failed: {e}")))?;
    match output {
        Some(path) => std::fs::write(path, json + "\n")?,
        None => println!("{json}"),
    }
    Ok(ExitCode::SUCCESS)
}

fn parse_methods(spec: &str) -> attfm::Result<Vec<MethodSpec>> {
    let mut methods = Vec::new();
    for token in spec.split(',').map(str::trim).filter(|t| !t.is_empty()) {
        let lower = token.to_lowercase();
        let parts: Vec<&str> = lower.split(':').collect();
        let parse_r = |parts: &[&str]| -> attfm::Result<usize> {
            parts
                .get(1)
                .and_then(|p| p.parse().ok())
                .ok_or_else(|| Error::validation(format!("method `{token}` needs `:R`")))
        };
        let m = match parts[0] {
            "pinv" => MethodSpec::FactorPinv { r: parse_r(&parts)? },
            "cv" => MethodSpec::FactorRidgeCv { r: parse_r(&parts)? },
            "gcv" => MethodSpec::FactorRidgeGcv { r: parse_r(&parts)? },
            "fixed" => {
                let r = parse_r(&parts)?;
                let delta: f64 = parts
                    .get(2)
                    .and_then(|p| p.parse().ok())
                    .ok_or_else(|| Error::validation(format!("method `{token}` needs `:R:delta`")))?;
                MethodSpec::FactorRidgeFixed { r, delta }
            }
            "did" => MethodSpec::Did,
            "sc1" | "scm-i" => MethodSpec::ScI,
            "sc2" | "scm-ii" => MethodSpec::ScII,
            other => {
                return Err(Error::validation(format!(
                    "unknown method `{other}` (expected pinv:R, cv:R, gcv:R, fixed:R:delta, did, sc1, sc2)"
                )))
            }
        };
        methods.push(m);
    }
    if methods.is_empty() {
        return Err(Error::validation("--methods parsed to an empty menu"));
    }
    Ok(methods)
}

fn cmd_simulate(args: SimulateArgs) -> attfm::Result<ExitCode> {
    let file = file_config(&args.common)?;
    let t0 = file.merge(args.t0, "t0")?.unwrap_or(5);
    let n = file.merge(args.n, "n")?.unwrap_or(100);
    let reps = file.merge(args.reps, "reps")?.unwrap_or(500);
    let seed = file.merge(args.seed, "seed")?.unwrap_or(0);
    let jobs = file.merge(args.jobs, "jobs")?;
    let methods_raw: Option<String> = file.merge(args.methods, "methods")?;
    let output: Option<PathBuf> = file.merge(args.output, "output")?;

    let mut config = McConfig {
        t0,
        t1: 0,
        n,
        reps,
        base_seed: seed,
        methods: MethodSpec::default_menu(),
        noise: NoiseScales::default(),
    };
    if let Some(raw) = methods_raw {
        config.methods = parse_methods(&raw)?;
    }

    let result = match jobs {
        Some(workers) => {
            if workers == 0 {
                return Err(Error::validation("--jobs must be at least 1"));
            }
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(workers)
                .build()
                .map_err(|e| Error::numerical(format!("thread pool: {e}")))?;
            pool.install(|| run_study(&config))?
        }
        None => run_study(&config)?,
    };

    println!("{:<18} {:>9} {:>9} {:>9}", "method", "bias", "sd", "rmse");
    for m in &result.methods {
        println!("{:<18} {:>9.4} {:>9.4} {:>9.4}", m.label, m.bias, m.sd, m.rmse);
    }
    println!(
        "reps={} dropped={} seed={} t0={} n={}{}",
        result.reps,
        result.dropped,
        result.base_seed,
        result.t0,
        result.n,
        if result.unreliable { " UNRELIABLE" } else { "" }
    );

    if let Some(prefix) = output {
        let csv_path = prefix.with_extension("csv");
        let json_path = prefix.with_extension("json");
        let mut csv = Vec::new();
        attfm::mc::write_study_csv(&result, &mut csv)?;
        std::fs::write(&csv_path, csv)?;
        let mut json = Vec::new();
        attfm::mc::write_study_json(&result, &mut json)?;
        std::fs::write(&json_path, json)?;
    }

    if result.unreliable {
        eprintln!(
            "attfm: study unreliable: {} of {} attempted replications dropped",
            result.dropped,
            result.reps + result.dropped
        );
        return Ok(ExitCode::from(4));
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_inspect(args: InspectArgs) -> attfm::Result<ExitCode> {
    let file = file_config(&args.common)?;
    let input = file.merge(args.input, "input")?;
    let r_weights = file.merge(args.r_weights, "r")?.unwrap_or(2);
    let weights_raw: Option<String> = file.merge(args.weights, "weights")?;

    let panel = load_input(input.as_deref())?;
    let diag = validate(&panel);
    let weighting = parse_weighting(weights_raw.as_deref())?;

    let beta = estimate_beta(&panel)?;
    let resid = residualize(&panel, &beta)?;
    let weights = hermite_weights(r_weights, &panel)?;
    let moments = build_moments(&resid, &weights, &panel)?;
    let wh = weighting.sqrt_matrix(r_weights)?;
    let weighted = &wh * moments.omega_pre();
    let svd = linalg::SvdFactors::new(&weighted);
    let sigma: Vec<f64> = svd.singular_values.iter().copied().collect();

    println!("n_units={} n_controls={} t0={} t1={} R={r_weights}", panel.n_units(), diag.n_controls, panel.t0(), panel.t1());
    println!("gram_condition={:.6e}{}", diag.gram_condition, if diag.collinear { " COLLINEAR" } else { "" });
    let profile: Vec<String> = sigma.iter().map(|s| format!("{s:.6e}")).collect();
    println!("singular_values=[{}]", profile.join(", "));
    let full = r_weights.min(panel.t0());
    let gap_ratio = if sigma[0] > 0.0 { sigma[full - 1] / sigma[0] } else { 0.0 };
    println!("gap_ratio={gap_ratio:.6e}");
    let suggestion = if gap_ratio >= GAP_RATIO_FLOOR { "pinv" } else { "ridge" };
    println!("suggested_variant={suggestion}");
    Ok(ExitCode::SUCCESS)
}
