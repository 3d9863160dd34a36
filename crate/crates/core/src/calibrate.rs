//! Maps grid travel times onto reported travel times and checks the
//! calibrated times against held-out calls.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geogrid::Grid;
use crate::ingest::{trim_quantiles, CallRecord, SNAP_CELLS};
use crate::stats::{fit_line, BatchSummary};

#[derive(Debug, Error, PartialEq)]
pub enum CalibrationError {
    #[error("need at least 3 usable pairs, have {0}")]
    TooFewPairs(usize),
    #[error("regressor has no spread; fit is singular")]
    Singular,
    #[error("trim fraction must be in [0, 0.5), got {0}")]
    BadTrim(f64),
    #[error("need {needed} usable calls for {n_batches} batches of {batch_size}, have {available}")]
    InsufficientCalls { needed: usize, available: usize, n_batches: usize, batch_size: usize },
    #[error("batch size and batch count must be positive")]
    EmptyBatches,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Identity,
    Linear,
    LogLog,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationModel {
    pub kind: ModelKind,
    #[serde(rename = "a")]
    pub intercept: f64,
    #[serde(rename = "b")]
    pub slope: f64,
    pub r_squared: f64,
    pub trim_p: f64,
    pub n_used: usize,
}

impl CalibrationModel {
    pub fn identity() -> Self {
        Self { kind: ModelKind::Identity, intercept: 0.0, slope: 1.0, r_squared: 1.0, trim_p: 0.0, n_used: 0 }
    }

    pub fn loglog(intercept: f64, slope: f64) -> Self {
        Self { kind: ModelKind::LogLog, intercept, slope, r_squared: f64::NAN, trim_p: 0.0, n_used: 0 }
    }

    /// Calibrated travel time for a grid travel time.
    pub fn apply(&self, grid_s: f64) -> f64 {
        match self.kind {
            ModelKind::Identity => grid_s,
            ModelKind::Linear => (self.intercept + self.slope * grid_s).max(0.0),
            ModelKind::LogLog => {
                if grid_s <= 0.0 {
                    log::trace!("zero grid time maps to zero");
                    0.0
                } else {
                    (self.intercept + self.slope * grid_s.ln()).exp()
                }
            }
        }
    }
}

impl Default for CalibrationModel {
    fn default() -> Self {
        Self::identity()
    }
}

fn prepare(pairs: &[(f64, f64)], trim_p: f64, positive: bool) -> Result<Vec<(f64, f64)>, CalibrationError> {
    if !(0.0..0.5).contains(&trim_p) {
        return Err(CalibrationError::BadTrim(trim_p));
    }
    let usable: Vec<(f64, f64)> = pairs
        .iter()
        .copied()
        .filter(|(g, r)| g.is_finite() && r.is_finite() && (!positive || (*g > 0.0 && *r > 0.0)))
        .collect();
    let kept = trim_quantiles(&usable, trim_p);
    if kept.len() < 3 {
        return Err(CalibrationError::TooFewPairs(kept.len()));
    }
    Ok(kept)
}

/// OLS of `ln(reported)` on `ln(grid)` after trimming the reported tails.
/// Pairs with a non-positive value are discarded before trimming.
pub fn fit_loglog(pairs: &[(f64, f64)], trim_p: f64) -> Result<CalibrationModel, CalibrationError> {
    let kept = prepare(pairs, trim_p, true)?;
    let xs: Vec<f64> = kept.iter().map(|p| p.0.ln()).collect();
    let ys: Vec<f64> = kept.iter().map(|p| p.1.ln()).collect();
    let f = fit_line(&xs, &ys).ok_or(CalibrationError::Singular)?;
    Ok(CalibrationModel {
        kind: ModelKind::LogLog,
        intercept: f.intercept,
        slope: f.slope,
        r_squared: f.r_squared,
        trim_p,
        n_used: kept.len(),
    })
}

/// OLS on the raw scale.
pub fn fit_linear(pairs: &[(f64, f64)], trim_p: f64) -> Result<CalibrationModel, CalibrationError> {
    let kept = prepare(pairs, trim_p, false)?;
    let xs: Vec<f64> = kept.iter().map(|p| p.0).collect();
    let ys: Vec<f64> = kept.iter().map(|p| p.1).collect();
    let f = fit_line(&xs, &ys).ok_or(CalibrationError::Singular)?;
    Ok(CalibrationModel {
        kind: ModelKind::Linear,
        intercept: f.intercept,
        slope: f.slope,
        r_squared: f.r_squared,
        trim_p,
        n_used: kept.len(),
    })
}

/// (grid travel time, reported travel time) for every call that carries an
/// ambulance origin and a reported travel time inside the grid.
pub fn travel_pairs(calls: &[CallRecord], grid: &Grid) -> (Vec<(f64, f64)>, usize) {
    let mut pairs = Vec::with_capacity(calls.len());
    let mut excluded = 0;
    for c in calls {
        match grid_travel_for_call(c, grid) {
            Some(pair) => pairs.push(pair),
            None => excluded += 1,
        }
    }
    (pairs, excluded)
}

fn grid_travel_for_call(c: &CallRecord, grid: &Grid) -> Option<(f64, f64)> {
    let reported = c.reported_travel_s?;
    let from = grid.assign_cell_snapped(c.ambulance_lat?, c.ambulance_lon?, SNAP_CELLS).ok()?;
    let to = grid.assign_cell_snapped(c.lat, c.lon, SNAP_CELLS).ok()?;
    Some((grid.travel(from, to), reported))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationReport {
    /// Mean of (calibrated - reported) per batch, seconds.
    pub batch_errors: Vec<f64>,
    pub summary: BatchSummary,
    pub n_batches: usize,
    pub batch_size: usize,
    pub excluded: usize,
}

/// Batched comparison of calibrated grid times with reported travel times.
/// Batches are contiguous runs of usable calls in input order.
pub fn verify(
    test_calls: &[CallRecord],
    grid: &Grid,
    model: &CalibrationModel,
    batch_size: usize,
    n_batches: usize,
) -> Result<VerificationReport, CalibrationError> {
    if batch_size == 0 || n_batches == 0 {
        return Err(CalibrationError::EmptyBatches);
    }
    let (pairs, excluded) = travel_pairs(test_calls, grid);
    let needed = batch_size * n_batches;
    if pairs.len() < needed {
        return Err(CalibrationError::InsufficientCalls { needed, available: pairs.len(), n_batches, batch_size });
    }
    let errors: Vec<f64> = pairs[..needed].iter().map(|&(g, r)| model.apply(g) - r).collect();
    let batch_errors: Vec<f64> = errors.chunks(batch_size).map(crate::stats::mean).collect();
    Ok(VerificationReport {
        summary: BatchSummary::from_batches(&batch_errors),
        batch_errors,
        n_batches,
        batch_size,
        excluded,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geogrid::{build_grid, Bounds, SyntheticSpeed};
    use chrono::DateTime;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn grid() -> Grid {
        let b = Bounds::new(30.0, 30.2, -97.8, -97.6).unwrap();
        build_grid(b, 4, 4, &SyntheticSpeed::new(40.0).unwrap()).unwrap()
    }

    fn call(grid: &Grid, from: usize, to: usize, reported: Option<f64>) -> CallRecord {
        let t = DateTime::parse_from_rfc3339("2020-01-06T09:00:00-06:00").unwrap();
        let c = grid.cell_centers[to];
        let a = grid.cell_centers[from];
        let mut r = CallRecord::new(t, c.lat, c.lon);
        r.ambulance_lat = Some(a.lat);
        r.ambulance_lon = Some(a.lon);
        r.reported_travel_s = reported;
        r
    }

    #[test]
    fn noiseless_recovery() {
        let pairs: Vec<(f64, f64)> = (1..50)
            .map(|k| {
                let g = 30.0 * k as f64;
                (g, (0.5 + 0.9 * g.ln()).exp())
            })
            .collect();
        let m = fit_loglog(&pairs, 0.0).unwrap();
        assert!((m.intercept - 0.5).abs() < 1e-9);
        assert!((m.slope - 0.9).abs() < 1e-9);
        assert!((m.r_squared - 1.0).abs() < 1e-9);
        assert_eq!(m.n_used, 49);
    }

    #[test]
    fn refit_on_predictions_is_idempotent() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let pairs: Vec<(f64, f64)> = (0..200)
            .map(|_| {
                let g: f64 = rng.random_range(60.0..900.0);
                (g, g * rng.random_range(0.5..1.5))
            })
            .collect();
        let m = fit_loglog(&pairs, 0.0).unwrap();
        let again: Vec<(f64, f64)> = pairs.iter().map(|&(g, _)| (g, m.apply(g))).collect();
        let m2 = fit_loglog(&again, 0.0).unwrap();
        assert!((m2.intercept - m.intercept).abs() < 1e-9);
        assert!((m2.slope - m.slope).abs() < 1e-9);
        assert!((m2.r_squared - 1.0).abs() < 1e-9);
    }

    #[test]
    fn pure_noise_gives_flat_fit() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let pairs: Vec<(f64, f64)> =
            (0..1000).map(|_| (rng.random_range(10.0..1000.0), rng.random_range(10.0..1000.0))).collect();
        let m = fit_loglog(&pairs, 0.0).unwrap();
        assert!(m.slope.abs() < 0.1, "{}", m.slope);
        assert!(m.r_squared < 0.02);
    }

    #[test]
    fn singular_and_too_few() {
        assert_eq!(fit_loglog(&[(5.0, 1.0), (5.0, 2.0), (5.0, 3.0)], 0.0), Err(CalibrationError::Singular));
        assert_eq!(fit_loglog(&[(5.0, 1.0), (6.0, 2.0)], 0.0), Err(CalibrationError::TooFewPairs(2)));
        assert_eq!(
            fit_loglog(&[(0.0, 1.0), (6.0, 2.0), (7.0, 0.0), (8.0, 1.0)], 0.0),
            Err(CalibrationError::TooFewPairs(2))
        );
    }

    #[test]
    fn trimmed_count_is_reported() {
        let pairs: Vec<(f64, f64)> = (1..=100).map(|k| (k as f64, k as f64)).collect();
        let m = fit_loglog(&pairs, 0.05).unwrap();
        assert_eq!(m.n_used, trim_quantiles(&pairs, 0.05).len());
        assert_eq!(m.n_used, 90);
    }

    #[test]
    fn apply_rules() {
        let id = CalibrationModel::identity();
        assert_eq!(id.apply(123.0), 123.0);
        let neutral = CalibrationModel::loglog(0.0, 1.0);
        for g in [1.0, 17.5, 600.0] {
            assert!((neutral.apply(g) - g).abs() < 1e-9);
        }
        assert_eq!(neutral.apply(0.0), 0.0);
        let m = CalibrationModel::loglog(1.0, 0.8);
        assert!(m.apply(100.0) < m.apply(200.0));
        assert!(m.apply(1e-6) > 0.0);
    }

    #[test]
    fn model_json_shape() {
        let v = serde_json::to_value(CalibrationModel::loglog(0.5, 0.9)).unwrap();
        assert_eq!(v["kind"], "loglog");
        assert_eq!(v["a"], 0.5);
        assert_eq!(v["b"], 0.9);
    }

    #[test]
    fn verify_identity_on_exact_reports() {
        let g = grid();
        let calls: Vec<CallRecord> =
            (0..40).map(|k| call(&g, k % 16, (k * 7) % 16, Some(g.travel(k % 16, (k * 7) % 16)))).collect();
        let r = verify(&calls, &g, &CalibrationModel::identity(), 10, 4).unwrap();
        assert!(r.batch_errors.iter().all(|e| e.abs() < 1e-9));
        assert_eq!(r.excluded, 0);
    }

    #[test]
    fn verify_sees_injected_bias() {
        let g = grid();
        let calls: Vec<CallRecord> =
            (0..60).map(|k| call(&g, k % 16, (k * 5) % 16, Some(g.travel(k % 16, (k * 5) % 16) - 60.0))).collect();
        let r = verify(&calls, &g, &CalibrationModel::identity(), 20, 3).unwrap();
        assert!((r.summary.mean - 60.0).abs() < 1e-9);
        let mean_of_all = crate::stats::mean(&calls.iter().map(|_| 60.0).collect::<Vec<_>>());
        assert!((r.summary.mean - mean_of_all).abs() < 1e-9);
    }

    #[test]
    fn verify_excludes_and_errors() {
        let g = grid();
        let mut calls: Vec<CallRecord> = (0..5).map(|k| call(&g, 0, k, Some(10.0))).collect();
        calls.push(call(&g, 0, 1, None));
        let r = verify(&calls, &g, &CalibrationModel::identity(), 5, 1).unwrap();
        assert_eq!(r.excluded, 1);
        assert!(r.summary.single_batch);
        assert!(matches!(
            verify(&calls, &g, &CalibrationModel::identity(), 5, 2),
            Err(CalibrationError::InsufficientCalls { .. })
        ));
    }
}
