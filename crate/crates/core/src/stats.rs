//! Small numeric helpers shared by the simulator, calibration and CLI.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample standard deviation (divisor `n - 1`); `None` below two values.
pub fn sample_std(xs: &[f64]) -> Option<f64> {
    if xs.len() < 2 {
        return None;
    }
    let m = mean(xs);
    let ss: f64 = xs.iter().map(|x| (x - m) * (x - m)).sum();
    Some((ss / (xs.len() - 1) as f64).sqrt())
}

/// Mean and spread across batch statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchSummary {
    pub mean: f64,
    /// Zero when there is a single batch.
    pub std: f64,
    pub n_batches: usize,
    pub single_batch: bool,
}

impl BatchSummary {
    pub fn from_batches(values: &[f64]) -> Self {
        let std = sample_std(values);
        Self { mean: mean(values), std: std.unwrap_or(0.0), n_batches: values.len(), single_batch: std.is_none() }
    }

    /// `"6.210 +/- 0.037"` after dividing by `scale`.
    pub fn format(&self, scale: f64) -> String {
        format!("{:.3} +/- {:.3}", self.mean / scale, self.std / scale)
    }
}

/// Deterministic child seed for a named substream of a root seed.
pub fn substream_seed(root: u64, label: &str, index: u64) -> u64 {
    let mut h = Sha256::new();
    h.update(root.to_le_bytes());
    h.update((label.len() as u64).to_le_bytes());
    h.update(label.as_bytes());
    h.update(index.to_le_bytes());
    let out = h.finalize();
    u64::from_le_bytes(out[..8].try_into().expect("8 bytes"))
}

/// Simple least-squares line `y = a + b x` with `r^2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LineFit {
    pub intercept: f64,
    pub slope: f64,
    pub r_squared: f64,
    /// Standard errors of intercept and slope; NaN below three points.
    pub se_intercept: f64,
    pub se_slope: f64,
}

/// Returns `None` when the regressor has no spread.
pub fn fit_line(xs: &[f64], ys: &[f64]) -> Option<LineFit> {
    let n = xs.len();
    if n < 2 || n != ys.len() {
        return None;
    }
    let mx = mean(xs);
    let my = mean(ys);
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    if sxx <= 1e-20 * xs.iter().map(|x| x * x).sum::<f64>() {
        return None;
    }
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ssr: f64 = xs.iter().zip(ys).map(|(x, y)| (y - intercept - slope * x).powi(2)).sum();
    let sst: f64 = ys.iter().map(|y| (y - my) * (y - my)).sum();
    let r_squared = if sst == 0.0 { 1.0 } else { 1.0 - ssr / sst };
    let (se_intercept, se_slope) = if n > 2 {
        let s2 = ssr / (n - 2) as f64;
        ((s2 * (1.0 / n as f64 + mx * mx / sxx)).sqrt(), (s2 / sxx).sqrt())
    } else {
        (f64::NAN, f64::NAN)
    };
    Some(LineFit { intercept, slope, r_squared, se_intercept, se_slope })
}
