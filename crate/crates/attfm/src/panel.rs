//! Balanced-panel data model, CSV ingestion, and validation.
//!
//! Panels are long-format CSV with header `unit,time,treated,y,z1,...,zd`;
//! `time` is a signed integer over a contiguous range containing 0, and
//! covariates are time invariant. On load, units are re-indexed so treated
//! units come first (the single treated unit sits at index 0).

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg;

/// Control-covariate Gram condition number above which the Gram matrix is
/// treated as collinear: a warning at load, a hard error inside estimation.
pub const GRAM_CONDITION_LIMIT: f64 = 1e12;

/// A balanced outcome panel with one treatment indicator per unit and
/// time-invariant covariates. Immutable after construction.
#[derive(Debug, Clone, PartialEq)]
pub struct PanelData {
    n_units: usize,
    t0: usize,
    t1: usize,
    /// N × (T₀+T₁+1), column j holds period t = j − T₀.
    outcomes: DMatrix<f64>,
    treated: Vec<bool>,
    /// N × d time-invariant covariates.
    covariates: DMatrix<f64>,
    unit_ids: Vec<String>,
}

impl PanelData {
    /// Assemble a panel from parts, checking shapes and period counts.
    pub fn new(
        outcomes: DMatrix<f64>,
        treated: Vec<bool>,
        covariates: DMatrix<f64>,
        t0: usize,
        unit_ids: Vec<String>,
    ) -> Result<Self> {
        let n_units = outcomes.nrows();
        if n_units == 0 {
            return Err(Error::validation("panel has no units"));
        }
        if t0 == 0 {
            return Err(Error::validation("panel has no pre-treatment periods"));
        }
        if outcomes.ncols() < t0 + 1 {
            return Err(Error::validation(format!(
                "panel has {} periods but t0 = {} requires at least {}",
                outcomes.ncols(),
                t0,
                t0 + 1
            )));
        }
        if treated.len() != n_units || covariates.nrows() != n_units || unit_ids.len() != n_units {
            return Err(Error::validation("unit dimension mismatch across panel fields"));
        }
        if covariates.ncols() == 0 {
            return Err(Error::validation("panel has zero covariate columns"));
        }
        if !treated.iter().any(|&d| d) {
            return Err(Error::validation("panel has no treated unit"));
        }
        if outcomes.iter().any(|v| !v.is_finite()) || covariates.iter().any(|v| !v.is_finite()) {
            return Err(Error::validation("panel contains non-finite values"));
        }
        let t1 = outcomes.ncols() - t0 - 1;
        Ok(PanelData {
            n_units,
            t0,
            t1,
            outcomes,
            treated,
            covariates,
            unit_ids,
        })
    }

    pub fn n_units(&self) -> usize {
        self.n_units
    }

    /// Number of pre-treatment periods T₀ (periods −T₀..−1).
    pub fn t0(&self) -> usize {
        self.t0
    }

    /// Last post period T₁ (post periods are 0..=T₁).
    pub fn t1(&self) -> usize {
        self.t1
    }

    pub fn n_periods(&self) -> usize {
        self.t0 + self.t1 + 1
    }

    /// Covariate dimension d.
    pub fn n_covariates(&self) -> usize {
        self.covariates.ncols()
    }

    pub fn unit_ids(&self) -> &[String] {
        &self.unit_ids
    }

    pub fn treated_flags(&self) -> &[bool] {
        &self.treated
    }

    pub fn outcomes(&self) -> &DMatrix<f64> {
        &self.outcomes
    }

    pub fn covariates(&self) -> &DMatrix<f64> {
        &self.covariates
    }

    /// Column index of period `t` (t ranges −T₀..=T₁).
    pub fn col_of(&self, t: i64) -> usize {
        debug_assert!(t >= -(self.t0 as i64) && t <= self.t1 as i64);
        (t + self.t0 as i64) as usize
    }

    pub fn times(&self) -> impl Iterator<Item = i64> {
        -(self.t0 as i64)..=(self.t1 as i64)
    }

    pub fn outcome(&self, unit: usize, t: i64) -> f64 {
        self.outcomes[(unit, self.col_of(t))]
    }

    pub fn covariate_row(&self, unit: usize) -> DVector<f64> {
        self.covariates.row(unit).transpose()
    }

    /// Index of the single treated unit; errors unless exactly one unit is
    /// treated.
    pub fn treated_unit(&self) -> Result<usize> {
        let mut it = self.treated.iter().enumerate().filter(|(_, &d)| d);
        match (it.next(), it.next()) {
            (Some((i, _)), None) => Ok(i),
            _ => Err(Error::validation("exactly one treated unit required")),
        }
    }

    pub fn control_indices(&self) -> Vec<usize> {
        (0..self.n_units).filter(|&i| !self.treated[i]).collect()
    }

    pub fn n_controls(&self) -> usize {
        self.treated.iter().filter(|&&d| !d).count()
    }

    /// Pre-treatment outcomes of `unit` ordered (t=−1, −2, …, −T₀), the
    /// ordering shared by all pre-period vectors and moment columns.
    pub fn pre_period_outcomes(&self, unit: usize) -> DVector<f64> {
        DVector::from_fn(self.t0, |s, _| self.outcome(unit, -(s as i64) - 1))
    }

    /// Gram matrix (1/N₀) Σ Zᵢ Zᵢ' over control units.
    pub fn control_gram(&self) -> DMatrix<f64> {
        let d = self.n_covariates();
        let mut gram = DMatrix::<f64>::zeros(d, d);
        let controls = self.control_indices();
        for &i in &controls {
            for r in 0..d {
                let zr = self.covariates[(i, r)];
                for c in 0..d {
                    gram[(r, c)] += zr * self.covariates[(i, c)];
                }
            }
        }
        gram / controls.len() as f64
    }

    /// A copy of the panel with one unit removed (leave-one-out folds).
    pub fn remove_unit(&self, unit: usize) -> Result<PanelData> {
        if unit >= self.n_units {
            return Err(Error::validation("remove_unit: index out of range"));
        }
        if self.n_units <= 2 {
            return Err(Error::validation("remove_unit would leave fewer than 2 units"));
        }
        let keep: Vec<usize> = (0..self.n_units).filter(|&i| i != unit).collect();
        let outcomes = self.outcomes.select_rows(keep.iter());
        let covariates = self.covariates.select_rows(keep.iter());
        let treated = keep.iter().map(|&i| self.treated[i]).collect();
        let unit_ids = keep.iter().map(|&i| self.unit_ids[i].clone()).collect();
        PanelData::new(outcomes, treated, covariates, self.t0, unit_ids)
    }
}

/// Load-time diagnostics; reported, never thrown.
#[derive(Debug, Clone)]
pub struct PanelDiagnostics {
    pub n_controls: usize,
    /// Condition number of the control-covariate Gram matrix.
    pub gram_condition: f64,
    /// Mean control outcome per period, ordered t = −T₀..T₁.
    pub period_control_means: Vec<f64>,
    /// True when `gram_condition` exceeds [`GRAM_CONDITION_LIMIT`].
    pub collinear: bool,
}

/// Condition-number report for the control covariate Gram matrix plus basic
/// panel summaries (Gram full rank is the estimability requirement on Z).
pub fn validate(panel: &PanelData) -> PanelDiagnostics {
    let gram = panel.control_gram();
    let svd = linalg::SvdFactors::new(&gram);
    let smax = svd.sigma_max();
    let smin = svd.singular_values.iter().copied().fold(f64::INFINITY, f64::min);
    let gram_condition = if smin > 0.0 { smax / smin } else { f64::INFINITY };
    let controls = panel.control_indices();
    let period_control_means = (0..panel.n_periods())
        .map(|j| controls.iter().map(|&i| panel.outcomes()[(i, j)]).sum::<f64>() / controls.len() as f64)
        .collect();
    PanelDiagnostics {
        n_controls: controls.len(),
        gram_condition,
        period_control_means,
        collinear: gram_condition > GRAM_CONDITION_LIMIT,
    }
}

/// Load a long-format panel CSV (`unit,time,treated,y,z1..zd`).
///
/// Units are re-indexed with treated units first; `t0 = |min time|`,
/// `t1 = max time`. Errors on unbalanced panels, treated flags or covariates
/// varying within a unit, non-numeric fields, and missing pre periods.
pub fn load_panel_csv<R: Read>(reader: R) -> Result<PanelData> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let cols: Vec<&str> = headers.iter().collect();
    if cols.len() < 5 || cols[0] != "unit" || cols[1] != "time" || cols[2] != "treated" || cols[3] != "y" {
        return Err(Error::validation(
            "header must be `unit,time,treated,y,z1,...,zd`",
        ));
    }
    let d = cols.len() - 4;
    for (k, name) in cols[4..].iter().enumerate() {
        if *name != format!("z{}", k + 1) {
            return Err(Error::validation(format!(
                "covariate column {} must be named z{}, got `{}`",
                k + 5,
                k + 1,
                name
            )));
        }
    }

    struct UnitRows {
        treated: bool,
        covariates: Vec<f64>,
        rows: BTreeMap<i64, f64>,
    }
    // BTreeMap keyed by first-appearance index is not needed: keep insertion
    // order for stable unit indexing.
    let mut order: Vec<String> = Vec::new();
    let mut units: BTreeMap<String, UnitRows> = BTreeMap::new();

    for (line, rec) in rdr.records().enumerate() {
        let rec = rec?;
        if rec.len() != cols.len() {
            return Err(Error::validation(format!(
                "row {}: expected {} fields, got {}",
                line + 2,
                cols.len(),
                rec.len()
            )));
        }
        let unit = rec[0].to_string();
        let parse_f = |s: &str, what: &str| -> Result<f64> {
            s.parse::<f64>().map_err(|_| {
                Error::validation(format!("row {}: non-numeric {} `{}`", line + 2, what, s))
            })
        };
        let time: i64 = rec[1]
            .parse()
            .map_err(|_| Error::validation(format!("row {}: non-integer time `{}`", line + 2, &rec[1])))?;
        let treated = match &rec[2] {
            "0" => false,
            "1" => true,
            other => {
                return Err(Error::validation(format!(
                    "row {}: treated must be 0 or 1, got `{other}`",
                    line + 2
                )))
            }
        };
        let y = parse_f(&rec[3], "outcome")?;
        let mut z = Vec::with_capacity(d);
        for k in 0..d {
            z.push(parse_f(&rec[4 + k], &format!("covariate z{}", k + 1))?);
        }

        let entry = units.entry(unit.clone()).or_insert_with(|| {
            order.push(unit.clone());
            UnitRows {
                treated,
                covariates: z.clone(),
                rows: BTreeMap::new(),
            }
        });
        if entry.treated != treated {
            return Err(Error::validation(format!(
                "treated flag varies within unit `{unit}`"
            )));
        }
        if entry.covariates != z {
            return Err(Error::validation(format!(
                "covariates vary over time within unit `{unit}`"
            )));
        }
        if entry.rows.insert(time, y).is_some() {
            return Err(Error::validation(format!(
                "duplicate row for unit `{unit}` at time {time}"
            )));
        }
    }

    if order.is_empty() {
        return Err(Error::validation("panel CSV contains no data rows"));
    }

    let tmin = units.values().flat_map(|u| u.rows.keys().copied()).min().unwrap();
    let tmax = units.values().flat_map(|u| u.rows.keys().copied()).max().unwrap();
    if tmin >= 0 || tmax < 0 {
        return Err(Error::validation(format!(
            "times must form a contiguous range containing 0 with at least one pre period, got {tmin}..{tmax}"
        )));
    }
    let n_periods = (tmax - tmin + 1) as usize;
    for id in &order {
        let u = &units[id];
        if u.rows.len() != n_periods || u.rows.keys().next() != Some(&tmin) || u.rows.keys().last() != Some(&tmax) {
            return Err(Error::validation(format!(
                "unbalanced panel: unit `{id}` does not cover every period in {tmin}..{tmax}"
            )));
        }
    }

    // treated units first, preserving file order within each group
    let mut sorted: Vec<&String> = order.iter().filter(|id| units[*id].treated).collect();
    sorted.extend(order.iter().filter(|id| !units[*id].treated));

    let n = sorted.len();
    let mut outcomes = DMatrix::<f64>::zeros(n, n_periods);
    let mut covariates = DMatrix::<f64>::zeros(n, d);
    let mut treated = Vec::with_capacity(n);
    let mut unit_ids = Vec::with_capacity(n);
    for (i, id) in sorted.iter().enumerate() {
        let u = &units[*id];
        for (j, (_, y)) in u.rows.iter().enumerate() {
            outcomes[(i, j)] = *y;
        }
        for (k, z) in u.covariates.iter().enumerate() {
            covariates[(i, k)] = *z;
        }
        treated.push(u.treated);
        unit_ids.push((*id).clone());
    }

    PanelData::new(outcomes, treated, covariates, (-tmin) as usize, unit_ids)
}

pub fn load_panel_csv_path(path: impl AsRef<Path>) -> Result<PanelData> {
    let f = std::fs::File::open(path)?;
    load_panel_csv(std::io::BufReader::new(f))
}

/// Write a panel back to long-format CSV (unit-major, time ascending).
pub fn write_panel_csv<W: Write>(panel: &PanelData, writer: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    let d = panel.n_covariates();
    let mut header = vec!["unit".to_string(), "time".into(), "treated".into(), "y".into()];
    for k in 1..=d {
        header.push(format!("z{k}"));
    }
    wtr.write_record(&header)?;
    for i in 0..panel.n_units() {
        for t in panel.times() {
            let mut rec = vec![
                panel.unit_ids()[i].clone(),
                t.to_string(),
                if panel.treated_flags()[i] { "1" } else { "0" }.to_string(),
                format!("{}", panel.outcome(i, t)),
            ];
            for k in 0..d {
                rec.push(format!("{}", panel.covariates()[(i, k)]));
            }
            wtr.write_record(&rec)?;
        }
    }
    wtr.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    const MINIMAL: &str = "unit,time,treated,y,z1\n\
        A,-1,1,1.0,0.5\nA,0,1,2.0,0.5\nA,1,1,3.0,0.5\n\
        B,-1,0,0.5,1.5\nB,0,0,0.7,1.5\nB,1,0,0.9,1.5\n";

    #[test]
    fn loads_minimal_panel() {
        let p = load_panel_csv(MINIMAL.as_bytes()).unwrap();
        assert_eq!(p.n_units(), 2);
        assert_eq!(p.t0(), 1);
        assert_eq!(p.t1(), 1);
        assert_eq!(p.treated_unit().unwrap(), 0);
        assert_eq!(p.unit_ids()[0], "A");
        assert_eq!(p.outcome(0, -1), 1.0);
        assert_eq!(p.outcome(1, 1), 0.9);
    }

    #[test]
    fn treated_unit_moves_to_index_zero() {
        // treated listed second in the file
        let csv = "unit,time,treated,y,z1\n\
            B,-1,0,0.5,1.5\nB,0,0,0.7,1.5\n\
            A,-1,1,1.0,0.5\nA,0,1,2.0,0.5\n";
        let p = load_panel_csv(csv.as_bytes()).unwrap();
        assert_eq!(p.unit_ids()[0], "A");
        assert!(p.treated_flags()[0]);
    }

    #[test]
    fn missing_row_is_unbalanced() {
        let csv = MINIMAL.lines().take(6).collect::<Vec<_>>().join("\n");
        let err = load_panel_csv(csv.as_bytes()).unwrap_err();
        assert!(err.to_string().contains("unbalanced panel"), "{err}");
    }

    #[test]
    fn two_treated_units_load_but_estimator_rejects() {
        let csv = "unit,time,treated,y,z1\n\
            A,-1,1,1.0,0.5\nA,0,1,2.0,0.5\n\
            B,-1,1,0.5,1.5\nB,0,1,0.7,1.5\n\
            C,-1,0,0.2,0.9\nC,0,0,0.3,0.9\n";
        let p = load_panel_csv(csv.as_bytes()).unwrap();
        assert_eq!(p.n_units(), 3);
        let err = p.treated_unit().unwrap_err();
        assert_eq!(err.to_string(), "exactly one treated unit required");
    }

    #[test]
    fn varying_treated_flag_rejected() {
        let csv = "unit,time,treated,y,z1\n\
            A,-1,1,1.0,0.5\nA,0,0,2.0,0.5\n\
            B,-1,0,0.5,1.5\nB,0,0,0.7,1.5\n";
        let err = load_panel_csv(csv.as_bytes()).unwrap_err();
        assert!(err.to_string().contains("treated flag varies"), "{err}");
    }

    #[test]
    fn non_numeric_field_rejected() {
        let csv = "unit,time,treated,y,z1\nA,-1,1,oops,0.5\nB,-1,0,0.5,1.5\n";
        let err = load_panel_csv(csv.as_bytes()).unwrap_err();
        assert!(err.to_string().contains("non-numeric"), "{err}");
    }

    #[test]
    fn missing_pre_period_rejected() {
        let csv = "unit,time,treated,y,z1\nA,0,1,1.0,0.5\nA,1,1,2.0,0.5\nB,0,0,0.5,1.5\nB,1,0,0.7,1.5\n";
        assert!(load_panel_csv(csv.as_bytes()).is_err());
    }

    #[test]
    fn validate_orthonormal_design() {
        let csv = "unit,time,treated,y,z1,z2\n\
            T,-1,1,1.0,0.3,0.4\nT,0,1,2.0,0.3,0.4\n\
            B,-1,0,0.5,1,0\nB,0,0,0.7,1,0\n\
            C,-1,0,0.2,0,1\nC,0,0,0.3,0,1\n";
        let p = load_panel_csv(csv.as_bytes()).unwrap();
        let diag = validate(&p);
        assert_eq!(diag.n_controls, 2);
        assert_relative_eq!(diag.gram_condition, 1.0, epsilon = 1e-12);
        assert!(!diag.collinear);
        assert_relative_eq!(diag.period_control_means[0], 0.35, epsilon = 1e-12);
    }

    #[test]
    fn validate_flags_duplicated_covariate_column() {
        let csv = "unit,time,treated,y,z1,z2\n\
            T,-1,1,1.0,0.3,0.3\nT,0,1,2.0,0.3,0.3\n\
            B,-1,0,0.5,1.0,1.0\nB,0,0,0.7,1.0,1.0\n\
            C,-1,0,0.2,2.0,2.0\nC,0,0,0.3,2.0,2.0\n";
        let p = load_panel_csv(csv.as_bytes()).unwrap();
        let diag = validate(&p);
        assert!(diag.gram_condition > GRAM_CONDITION_LIMIT);
        assert!(diag.collinear);
    }

    #[test]
    fn gram_condition_matches_eigen_oracle() {
        // random N0=100, d=2: condition from the closed-form 2x2 eigenvalues
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        let n0 = 100;
        let mut rows = String::from("unit,time,treated,y,z1,z2\nT,-1,1,1,0.1,0.2\nT,0,1,1,0.1,0.2\n");
        let mut zs = Vec::new();
        for i in 0..n0 {
            let (a, b): (f64, f64) = (rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0));
            zs.push((a, b));
            rows.push_str(&format!("c{i},-1,0,0,{a},{b}\nc{i},0,0,0,{a},{b}\n"));
        }
        let p = load_panel_csv(rows.as_bytes()).unwrap();
        let diag = validate(&p);
        // oracle: eigenvalues of [[s11,s12],[s12,s22]] are
        // (tr ± sqrt(tr² − 4 det)) / 2
        let (mut s11, mut s12, mut s22) = (0.0, 0.0, 0.0);
        for &(a, b) in &zs {
            s11 += a * a;
            s12 += a * b;
            s22 += b * b;
        }
        let (s11, s12, s22) = (s11 / n0 as f64, s12 / n0 as f64, s22 / n0 as f64);
        let tr = s11 + s22;
        let det = s11 * s22 - s12 * s12;
        let disc = (tr * tr - 4.0 * det).sqrt();
        let oracle = ((tr + disc) / 2.0) / ((tr - disc) / 2.0);
        assert_relative_eq!(diag.gram_condition, oracle, max_relative = 1e-9);
    }

    #[test]
    fn csv_round_trip_preserves_panel() {
        let p = load_panel_csv(MINIMAL.as_bytes()).unwrap();
        let mut buf = Vec::new();
        write_panel_csv(&p, &mut buf).unwrap();
        let p2 = load_panel_csv(buf.as_slice()).unwrap();
        assert_eq!(p.n_units(), p2.n_units());
        assert_eq!(p.unit_ids(), p2.unit_ids());
        let diff = (p.outcomes() - p2.outcomes()).amax();
        assert!(diff <= 1e-12 * p.outcomes().amax().max(1.0));
        assert_eq!(p.covariates(), p2.covariates());
        // outcome mass unchanged by ingestion
        assert_relative_eq!(p.outcomes().sum(), p2.outcomes().sum(), epsilon = 1e-12);
    }

    #[test]
    fn remove_unit_keeps_shape() {
        let p = load_panel_csv(MINIMAL.as_bytes()).unwrap();
        assert!(p.remove_unit(1).is_err()); // would leave a single unit
        let csv = format!("{MINIMAL}C,-1,0,0.1,0.2\nC,0,0,0.2,0.2\nC,1,0,0.3,0.2\n");
        let p = load_panel_csv(csv.as_bytes()).unwrap();
        let q = p.remove_unit(2).unwrap();
        assert_eq!(q.n_units(), 2);
        assert_eq!(q.unit_ids(), &["A".to_string(), "B".into()]);
    }
}
