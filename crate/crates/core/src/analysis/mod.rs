//! Tract-level regression of reported travel time on grid travel time and
//! socio-economic covariates, compared by k-fold cross-validation.

mod regress;

use std::collections::BTreeMap;
use std::io::Read;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geogrid::Grid;
use crate::ingest::{kfold_partition, CallRecord, SNAP_CELLS};
use crate::stats::substream_seed;

pub use regress::{
    fit_lasso, fit_lasso_with, fit_ols, lasso_objective, mse, soft_threshold, LinearFit, RegressionError,
    RIDGE_FALLBACK,
};

pub const SVI_COLUMNS: [&str; 19] = [
    "E_TOTPOP",
    "E_HU",
    "E_HH",
    "E_POV",
    "E_UNEMP",
    "E_NOHSDP",
    "E_AGE65",
    "E_AGE17",
    "E_DISABL",
    "E_SNGPNT",
    "E_MINRTY",
    "E_LIMENG",
    "E_MUNIT",
    "E_MOBILE",
    "E_CROWD",
    "E_NOVEH",
    "E_GROUPQ",
    "E_UNINSUR",
    "E_DAYPOP",
];

pub const MIN_STATION_TIME: &str = "min.station.time";
pub const AVG_STATION_TIME: &str = "avg.station.time";

pub const DEFAULT_LAMBDA_GRID: [f64; 5] = [1e-3, 1e-2, 1e-1, 1e0, 1e1];
pub const LASSO_TOL: f64 = 1e-8;

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error("grid has no stations")]
    NoStations,
    #[error("missing column {0}")]
    MissingColumn(String),
    #[error("bad value {value:?} in column {column} at line {line}")]
    BadValue { column: String, line: usize, value: String },
    #[error("need at least 2 training rows, have {0}")]
    TooFewRows(usize),
    #[error("need k >= 2 and at most one fold per row (k = {k}, rows = {rows})")]
    BadFolds { k: usize, rows: usize },
    #[error(transparent)]
    Regression(#[from] RegressionError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TractDataset {
    pub tract_ids: Vec<String>,
    /// Mean reported travel time, minutes.
    pub y: Vec<f64>,
    /// Columns in `feature_names` order.
    pub x: Vec<Vec<f64>>,
    pub feature_names: Vec<String>,
    /// Tracts with calls but no covariate row.
    pub dropped_no_svi: usize,
    /// Calls lacking a reported travel time, a grid cell or a tract.
    pub dropped_calls: usize,
}

impl TractDataset {
    pub fn n_rows(&self) -> usize {
        self.y.len()
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.feature_names.iter().position(|n| n == name)
    }

    fn select(&self, rows: &[usize], cols: &[usize]) -> (Vec<Vec<f64>>, Vec<f64>) {
        let x = rows.iter().map(|&i| cols.iter().map(|&j| self.x[i][j]).collect()).collect();
        let y = rows.iter().map(|&i| self.y[i]).collect();
        (x, y)
    }
}

pub fn feature_names() -> Vec<String> {
    let mut v = vec![MIN_STATION_TIME.to_string(), AVG_STATION_TIME.to_string()];
    v.extend(SVI_COLUMNS.iter().map(|s| s.to_string()));
    v
}

/// `cell_index,tract_id` rows.
pub fn read_tract_map<R: Read>(reader: R) -> Result<BTreeMap<usize, String>, AnalysisError> {
    let mut rdr = csv::Reader::from_reader(reader);
    let headers = rdr.headers()?.clone();
    let find =
        |name: &str| headers.iter().position(|h| h.trim() == name).ok_or(AnalysisError::MissingColumn(name.into()));
    let (ci, ti) = (find("cell_index")?, find("tract_id")?);
    let mut map = BTreeMap::new();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let raw = rec.get(ci).unwrap_or("").trim();
        let cell = raw.parse().map_err(|_| AnalysisError::BadValue {
            column: "cell_index".into(),
            line: line + 2,
            value: raw.into(),
        })?;
        map.insert(cell, rec.get(ti).unwrap_or("").trim().to_string());
    }
    Ok(map)
}

/// Covariate table keyed by `tract_id` (or `FIPS`), with the 19 columns.
pub fn read_svi<R: Read>(reader: R) -> Result<BTreeMap<String, Vec<f64>>, AnalysisError> {
    let mut rdr = csv::Reader::from_reader(reader);
    let headers = rdr.headers()?.clone();
    let pos = |name: &str| headers.iter().position(|h| h.trim() == name);
    let key = pos("tract_id").or_else(|| pos("FIPS")).ok_or(AnalysisError::MissingColumn("tract_id".into()))?;
    let cols: Vec<usize> = SVI_COLUMNS
        .iter()
        .map(|c| pos(c).ok_or(AnalysisError::MissingColumn(c.to_string())))
        .collect::<Result<_, _>>()?;
    let mut out = BTreeMap::new();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let mut row = Vec::with_capacity(cols.len());
        for (&c, name) in cols.iter().zip(SVI_COLUMNS) {
            let raw = rec.get(c).unwrap_or("").trim();
            let v: f64 = raw.parse().ok().filter(|v: &f64| v.is_finite()).ok_or_else(|| AnalysisError::BadValue {
                column: name.into(),
                line: line + 2,
                value: raw.into(),
            })?;
            row.push(v);
        }
        out.insert(rec.get(key).unwrap_or("").trim().to_string(), row);
    }
    Ok(out)
}

/// Per-cell (min, mean) grid time in minutes from all stations.
pub fn cell_station_times(grid: &Grid) -> Result<Vec<(f64, f64)>, AnalysisError> {
    if grid.station_cells.is_empty() {
        return Err(AnalysisError::NoStations);
    }
    let k = grid.station_cells.len() as f64;
    Ok((0..grid.n_cells())
        .map(|c| {
            let times: Vec<f64> = grid.station_cells.iter().map(|&s| grid.travel(s, c) / 60.0).collect();
            (times.iter().copied().fold(f64::INFINITY, f64::min), times.iter().sum::<f64>() / k)
        })
        .collect())
}

/// One row per tract that has calls and covariates. Grid-time features are
/// per-cell values averaged over the tract's cells, weighted by call count.
pub fn assemble_tracts(
    calls: &[CallRecord],
    grid: &Grid,
    tract_map: &BTreeMap<usize, String>,
    svi: &BTreeMap<String, Vec<f64>>,
) -> Result<TractDataset, AnalysisError> {
    let cell_times = cell_station_times(grid)?;
    struct Acc {
        sum_y: f64,
        n: usize,
        min_w: f64,
        avg_w: f64,
    }
    let mut acc: BTreeMap<&str, Acc> = BTreeMap::new();
    let mut dropped_calls = 0;
    for c in calls {
        let Some(reported) = c.reported_travel_s else {
            dropped_calls += 1;
            continue;
        };
        let Ok(cell) = grid.assign_cell_snapped(c.lat, c.lon, SNAP_CELLS) else {
            dropped_calls += 1;
            continue;
        };
        let Some(tract) = tract_map.get(&cell) else {
            dropped_calls += 1;
            continue;
        };
        let a = acc.entry(tract.as_str()).or_insert(Acc { sum_y: 0.0, n: 0, min_w: 0.0, avg_w: 0.0 });
        a.sum_y += reported / 60.0;
        a.n += 1;
        a.min_w += cell_times[cell].0;
        a.avg_w += cell_times[cell].1;
    }
    let mut ds = TractDataset {
        tract_ids: Vec::new(),
        y: Vec::new(),
        x: Vec::new(),
        feature_names: feature_names(),
        dropped_no_svi: 0,
        dropped_calls,
    };
    for (tract, a) in acc {
        let Some(cov) = svi.get(tract) else {
            ds.dropped_no_svi += 1;
            continue;
        };
        let n = a.n as f64;
        let mut row = vec![a.min_w / n, a.avg_w / n];
        row.extend_from_slice(cov);
        ds.tract_ids.push(tract.to_string());
        ds.y.push(a.sum_y / n);
        ds.x.push(row);
    }
    if ds.dropped_no_svi > 0 {
        log::warn!("{} tracts had calls but no covariates", ds.dropped_no_svi);
    }
    Ok(ds)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardization {
    pub means: Vec<f64>,
    pub stds: Vec<f64>,
    /// Columns with no spread in the training rows; zeroed.
    pub zeroed: Vec<usize>,
}

impl Standardization {
    pub fn apply(&self, rows: &[Vec<f64>]) -> Vec<Vec<f64>> {
        rows.iter()
            .map(|r| {
                r.iter()
                    .enumerate()
                    .map(|(j, v)| if self.stds[j] > 0.0 { (v - self.means[j]) / self.stds[j] } else { 0.0 })
                    .collect()
            })
            .collect()
    }
}

/// Standardized train rows, test rows and the statistics used.
pub type StandardizedFold = (Vec<Vec<f64>>, Vec<Vec<f64>>, Standardization);

/// Centers and scales with training statistics (sample std).
pub fn standardize_fold(train: &[Vec<f64>], test: &[Vec<f64>]) -> Result<StandardizedFold, AnalysisError> {
    let n = train.len();
    if n < 2 {
        return Err(AnalysisError::TooFewRows(n));
    }
    let p = train[0].len();
    let mut means = vec![0.0; p];
    let mut stds = vec![0.0; p];
    let mut zeroed = Vec::new();
    for j in 0..p {
        let m = train.iter().map(|r| r[j]).sum::<f64>() / n as f64;
        let ss: f64 = train.iter().map(|r| (r[j] - m).powi(2)).sum();
        let s = (ss / (n - 1) as f64).sqrt();
        means[j] = m;
        if s > 1e-12 * m.abs().max(1.0) {
            stds[j] = s;
        } else {
            log::warn!("column {j} has no spread in the training fold; zeroed");
            zeroed.push(j);
        }
    }
    let st = Standardization { means, stds, zeroed };
    Ok((st.apply(train), st.apply(test), st))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ModelSpec {
    Baseline,
    OlsMin,
    OlsAvg,
    OlsBoth,
    LassoAll,
}

impl ModelSpec {
    pub const ALL: [ModelSpec; 5] =
        [ModelSpec::Baseline, ModelSpec::OlsMin, ModelSpec::OlsAvg, ModelSpec::OlsBoth, ModelSpec::LassoAll];

    pub fn label(&self) -> &'static str {
        match self {
            ModelSpec::Baseline => "Baseline",
            ModelSpec::OlsMin => "OLS",
            ModelSpec::OlsAvg => "OLS",
            ModelSpec::OlsBoth => "OLS",
            ModelSpec::LassoAll => "LASSO",
        }
    }

    pub fn variables(&self) -> &'static str {
        match self {
            ModelSpec::Baseline => "train mean",
            ModelSpec::OlsMin => "min.station.time",
            ModelSpec::OlsAvg => "avg.station.time",
            ModelSpec::OlsBoth => "min.station.time + avg.station.time",
            ModelSpec::LassoAll => "all 21 variables",
        }
    }

    fn columns(&self, n_features: usize) -> Vec<usize> {
        match self {
            ModelSpec::Baseline => vec![],
            ModelSpec::OlsMin => vec![0],
            ModelSpec::OlsAvg => vec![1],
            ModelSpec::OlsBoth => vec![0, 1],
            ModelSpec::LassoAll => (0..n_features).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelReport {
    pub model: ModelSpec,
    pub label: String,
    pub variables: String,
    pub fold_mse: Vec<f64>,
    pub average_mse: f64,
    /// Selected penalty per fold (LASSO only).
    pub lambdas: Vec<f64>,
}

fn fit_predict(
    spec: ModelSpec,
    x_train: &[Vec<f64>],
    y_train: &[f64],
    x_test: &[Vec<f64>],
    lambda: f64,
) -> Result<Vec<f64>, AnalysisError> {
    if spec == ModelSpec::Baseline {
        let m = y_train.iter().sum::<f64>() / y_train.len() as f64;
        return Ok(vec![m; x_test.len()]);
    }
    let (tr, te, _) = standardize_fold(x_train, x_test)?;
    let fit = if spec == ModelSpec::LassoAll {
        match fit_lasso(&tr, y_train, lambda, LASSO_TOL) {
            Ok(f) => f,
            Err(RegressionError::NotConverged { last, sweeps }) => {
                log::warn!("lasso stopped after {sweeps} sweeps; using last iterate");
                last
            }
            Err(e) => return Err(e.into()),
        }
    } else {
        fit_ols(&tr, y_train)?
    };
    Ok(fit.predict(&te))
}

/// Penalty with the lowest inner cross-validated error; ties keep the
/// earlier grid entry.
fn select_lambda(x: &[Vec<f64>], y: &[f64], k: usize, seed: u64, grid: &[f64]) -> Result<f64, AnalysisError> {
    let n = y.len();
    let k = k.min(n / 2).max(2);
    let folds = kfold_partition(n, k, seed);
    let mut best = (f64::INFINITY, grid.first().copied().unwrap_or(0.0));
    for &lambda in grid {
        let mut total = 0.0;
        for test in &folds {
            let (xtr, ytr, xte, yte) = split_rows(x, y, test);
            let pred = fit_predict(ModelSpec::LassoAll, &xtr, &ytr, &xte, lambda)?;
            total += mse(&pred, &yte);
        }
        let avg = total / folds.len() as f64;
        if avg < best.0 {
            best = (avg, lambda);
        }
    }
    Ok(best.1)
}

type Split = (Vec<Vec<f64>>, Vec<f64>, Vec<Vec<f64>>, Vec<f64>);

fn split_rows(x: &[Vec<f64>], y: &[f64], test: &[usize]) -> Split {
    let mut is_test = vec![false; y.len()];
    test.iter().for_each(|&i| is_test[i] = true);
    let (mut xtr, mut ytr, mut xte, mut yte) = (vec![], vec![], vec![], vec![]);
    for i in 0..y.len() {
        if is_test[i] {
            xte.push(x[i].clone());
            yte.push(y[i]);
        } else {
            xtr.push(x[i].clone());
            ytr.push(y[i]);
        }
    }
    (xtr, ytr, xte, yte)
}

/// Five models over the same seeded folds, sorted by average test MSE
/// (stable, so ties keep the model order).
pub fn compare_models(
    ds: &TractDataset,
    k: usize,
    seed: u64,
    lambda_grid: &[f64],
) -> Result<Vec<ModelReport>, AnalysisError> {
    compare_specs(ds, &ModelSpec::ALL, k, seed, lambda_grid)
}

pub fn compare_specs(
    ds: &TractDataset,
    specs: &[ModelSpec],
    k: usize,
    seed: u64,
    lambda_grid: &[f64],
) -> Result<Vec<ModelReport>, AnalysisError> {
    let n = ds.n_rows();
    if k < 2 || k > n {
        return Err(AnalysisError::BadFolds { k, rows: n });
    }
    let folds = kfold_partition(n, k, seed);
    let all_rows: Vec<usize> = (0..n).collect();
    let mut reports = Vec::new();
    for &spec in specs {
        let cols = spec.columns(ds.feature_names.len());
        let (x, y) = ds.select(&all_rows, &cols);
        let mut fold_mse = Vec::with_capacity(k);
        let mut lambdas = Vec::new();
        for (f, test) in folds.iter().enumerate() {
            let (xtr, ytr, xte, yte) = split_rows(&x, &y, test);
            let lambda = if spec == ModelSpec::LassoAll {
                let l = select_lambda(&xtr, &ytr, k, substream_seed(seed, "inner-folds", f as u64), lambda_grid)?;
                log::info!("fold {f}: lasso lambda {l}");
                lambdas.push(l);
                l
            } else {
                0.0
            };
            let pred = fit_predict(spec, &xtr, &ytr, &xte, lambda)?;
            fold_mse.push(mse(&pred, &yte));
        }
        let average_mse = fold_mse.iter().sum::<f64>() / fold_mse.len() as f64;
        reports.push(ModelReport {
            model: spec,
            label: spec.label().into(),
            variables: spec.variables().into(),
            fold_mse,
            average_mse,
            lambdas,
        });
    }
    reports.sort_by(|a, b| a.average_mse.total_cmp(&b.average_mse));
    Ok(reports)
}

pub fn report_csv(reports: &[ModelReport]) -> String {
    let mut s = String::from("Model,Variables,Average MSE\n");
    for r in reports {
        s.push_str(&format!("{},{},{:.4}\n", r.label, r.variables, r.average_mse));
    }
    s
}
