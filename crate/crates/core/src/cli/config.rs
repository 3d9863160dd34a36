use std::path::Path;

use chrono::Weekday;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use super::CliError;
use crate::geogrid::Bounds;
use crate::ingest::PeakWindow;

/// Every tunable of a run, as one flat JSON object.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub calls_csv: Option<String>,
    pub grid_json: Option<String>,
    pub travel_matrix_csv: Option<String>,
    pub svi_csv: Option<String>,
    pub tract_map_csv: Option<String>,

    pub min_lat: f64,
    pub max_lat: f64,
    pub min_lon: f64,
    pub max_lon: f64,
    pub rows: usize,
    pub cols: usize,
    pub speed_kmh: f64,
    pub station_cells: Vec<usize>,
    pub hospital_cells: Vec<usize>,
    pub coverage_threshold_s: f64,

    pub time_zone: String,
    pub period_s: i64,
    pub peak_only: bool,
    pub peak_start_hour: u32,
    pub peak_end_hour: u32,
    pub peak_weekdays: Vec<String>,
    pub train_fraction: f64,

    pub n: u32,
    #[serde(rename = "M", alias = "m")]
    pub m: usize,
    pub alpha: f64,
    pub epsilon: f64,
    pub max_iter: usize,
    pub max_nodes: usize,
    pub enumeration_budget: u64,
    pub hybrid_lambda: Option<f64>,

    pub n_calls: usize,
    pub n_batches: usize,
    pub resample: bool,
    pub lognormal_mu: f64,
    pub lognormal_sigma: f64,
    pub shortfall_threshold_s: f64,
    pub use_calibration: bool,

    pub trim_p: f64,
    pub verify_batch_size: usize,
    pub verify_batches: usize,

    pub alphas: Vec<f64>,
    pub cv_folds: usize,
    pub fleet_min: u32,
    pub fleet_max: u32,

    pub analysis_folds: usize,
    pub lambda_grid: Vec<f64>,

    pub synth_calls: usize,
    pub synth_calls_per_hour: f64,
    pub hotspot_cells: Vec<usize>,

    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            calls_csv: None,
            grid_json: None,
            travel_matrix_csv: None,
            svi_csv: None,
            tract_map_csv: None,
            min_lat: 30.15,
            max_lat: 30.35,
            min_lon: -97.85,
            max_lon: -97.61,
            rows: 6,
            cols: 6,
            speed_kmh: 40.0,
            station_cells: vec![7, 10, 25, 28],
            hospital_cells: vec![14, 21],
            coverage_threshold_s: 600.0,
            time_zone: "America/Chicago".into(),
            period_s: 3600,
            peak_only: true,
            peak_start_hour: 8,
            peak_end_hour: 20,
            peak_weekdays: ["Mon", "Tue", "Wed", "Thu", "Fri"].map(String::from).to_vec(),
            train_fraction: 0.2,
            n: 6,
            m: 200,
            alpha: 0.01,
            epsilon: 1e-6,
            max_iter: 50,
            max_nodes: 200_000,
            enumeration_budget: 2_000_000,
            hybrid_lambda: None,
            n_calls: 1000,
            n_batches: 12,
            resample: false,
            lognormal_mu: 3.65,
            lognormal_sigma: 0.3,
            shortfall_threshold_s: 600.0,
            use_calibration: true,
            trim_p: 0.05,
            verify_batch_size: 500,
            verify_batches: 20,
            alphas: vec![0.1, 0.05, 0.01, 0.001, 0.0001],
            cv_folds: 3,
            fleet_min: 3,
            fleet_max: 8,
            analysis_folds: 5,
            lambda_grid: vec![1e-3, 1e-2, 1e-1, 1e0, 1e1],
            synth_calls: 15_000,
            synth_calls_per_hour: 2.0,
            hotspot_cells: vec![8, 26],
            seed: 42,
        }
    }
}

fn parse_weekday(s: &str) -> Option<Weekday> {
    s.trim().parse().ok()
}

impl RunConfig {
    pub fn bounds(&self) -> Result<Bounds, CliError> {
        Bounds::new(self.min_lat, self.max_lat, self.min_lon, self.max_lon).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn peak_window(&self) -> Option<PeakWindow> {
        self.peak_only.then(|| PeakWindow {
            start_hour: self.peak_start_hour,
            end_hour: self.peak_end_hour,
            weekdays: self.peak_weekdays.iter().filter_map(|d| parse_weekday(d)).collect(),
        })
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |msg: String| Err(CliError::Config(msg));
        self.bounds()?;
        if self.rows == 0 || self.cols == 0 {
            return bad("rows and cols must be positive".into());
        }
        if !(self.speed_kmh > 0.0) {
            return bad(format!("speed_kmh must be positive, got {}", self.speed_kmh));
        }
        if self.station_cells.is_empty() {
            return bad("station_cells must not be empty".into());
        }
        if self.time_zone.parse::<chrono_tz::Tz>().is_err() {
            return bad(format!("unknown time_zone {:?}", self.time_zone));
        }
        if self.period_s <= 0 {
            return bad(format!("period_s must be positive, got {}", self.period_s));
        }
        if self.peak_start_hour >= self.peak_end_hour || self.peak_end_hour > 24 {
            return bad(format!("peak window {}..{} is empty", self.peak_start_hour, self.peak_end_hour));
        }
        if let Some(d) = self.peak_weekdays.iter().find(|d| parse_weekday(d).is_none()) {
            return bad(format!("unknown weekday {d:?}"));
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return bad(format!("train_fraction must be in (0, 1), got {}", self.train_fraction));
        }
        if self.m == 0 {
            return bad("M must be positive".into());
        }
        for a in std::iter::once(&self.alpha).chain(&self.alphas) {
            if !(*a > 0.0 && *a < 1.0) {
                return bad(format!("alpha must be in (0, 1), got {a}"));
            }
        }
        if !(self.epsilon > 0.0) {
            return bad(format!("epsilon must be positive, got {}", self.epsilon));
        }
        if self.max_iter == 0 || self.max_nodes == 0 {
            return bad("max_iter and max_nodes must be positive".into());
        }
        if let Some(l) = self.hybrid_lambda {
            if !(0.0..=1.0).contains(&l) {
                return bad(format!("hybrid_lambda must be in [0, 1], got {l}"));
            }
        }
        if self.n_calls == 0 || self.n_batches == 0 || self.verify_batch_size == 0 || self.verify_batches == 0 {
            return bad("batch sizes and counts must be positive".into());
        }
        if !(self.lognormal_sigma >= 0.0) || !self.lognormal_mu.is_finite() {
            return bad("lognormal parameters must be finite with sigma >= 0".into());
        }
        if !(0.0..0.5).contains(&self.trim_p) {
            return bad(format!("trim_p must be in [0, 0.5), got {}", self.trim_p));
        }
        if self.cv_folds < 2 || self.analysis_folds < 2 {
            return bad("cross-validation needs at least 2 folds".into());
        }
        if self.fleet_min < 1 || self.fleet_min > self.fleet_max {
            return bad(format!("fleet range {}..{} is invalid", self.fleet_min, self.fleet_max));
        }
        if self.lambda_grid.is_empty() || self.lambda_grid.iter().any(|l| !(*l >= 0.0)) {
            return bad("lambda_grid must hold non-negative values".into());
        }
        Ok(())
    }
}

/// Value of a `--key value` flag: JSON when it parses, a list for
/// comma-separated text, else a plain string.
fn override_value(raw: &str) -> Value {
    if let Ok(v) = serde_json::from_str::<Value>(raw) {
        return v;
    }
    if raw.contains(',') {
        return Value::Array(raw.split(',').map(|p| override_value(p.trim())).collect());
    }
    Value::String(raw.to_string())
}

/// Splits `--key value` pairs; keys use `-` or `_` interchangeably.
pub fn parse_overrides(args: &[String]) -> Result<Vec<(String, String)>, CliError> {
    let mut out = Vec::new();
    let mut it = args.iter();
    while let Some(flag) = it.next() {
        let Some(key) = flag.strip_prefix("--") else {
            return Err(CliError::Config(format!("expected --key, found {flag:?}")));
        };
        let (key, value) = match key.split_once('=') {
            Some((k, v)) => (k.to_string(), v.to_string()),
            None => {
                let v = it.next().ok_or_else(|| CliError::Config(format!("--{key} needs a value")))?;
                (key.to_string(), v.clone())
            }
        };
        out.push((key.replace('-', "_"), value));
    }
    Ok(out)
}

/// Defaults, then the config file, then the overrides.
pub fn resolve(config_path: Option<&Path>, overrides: &[(String, String)]) -> Result<RunConfig, CliError> {
    let mut doc = serde_json::to_value(RunConfig::default()).expect("config serialises");
    let obj = doc.as_object_mut().expect("object");
    if let Some(path) = config_path {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
        let file: Map<String, Value> = serde_json::from_str(&text)
            .map_err(|e| CliError::Config(format!("config {} is not a JSON object: {e}", path.display())))?;
        for (k, v) in file {
            let k = if k == "m" { "M".to_string() } else { k };
            obj.insert(k, v);
        }
    }
    for (k, v) in overrides {
        let k = if k == "m" { "M" } else { k.as_str() };
        obj.insert(k.to_string(), override_value(v));
    }
    let cfg: RunConfig = serde_json::from_value(doc).map_err(|e| CliError::Config(e.to_string()))?;
    cfg.validate()?;
    Ok(cfg)
}
