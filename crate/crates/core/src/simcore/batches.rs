use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{draw_service_time, simulate_with_service, SimCall, SimError, SimOutcome, SimParams};
use crate::dispatchflow::Deployment;
use crate::geogrid::Grid;
use crate::stats::{substream_seed, BatchSummary};

/// Calls for each batch: contiguous chronological slices, or uniform
/// draws with replacement (re-sorted by time) when `resample` is set.
pub fn batch_slices(
    calls: &[SimCall],
    n_calls: usize,
    n_batches: usize,
    resample: bool,
    seed: u64,
) -> Result<Vec<Vec<SimCall>>, SimError> {
    let needed = n_calls * n_batches;
    if resample {
        if calls.is_empty() && needed > 0 {
            return Err(SimError::InsufficientCalls { needed, available: 0 });
        }
        return Ok((0..n_batches)
            .map(|b| {
                let mut rng = ChaCha8Rng::seed_from_u64(substream_seed(seed, "resample", b as u64));
                let mut v: Vec<SimCall> = (0..n_calls).map(|_| calls[rng.random_range(0..calls.len())]).collect();
                v.sort_by(|a, b| a.time_s.total_cmp(&b.time_s));
                v
            })
            .collect());
    }
    if needed > calls.len() {
        return Err(SimError::InsufficientCalls { needed, available: calls.len() });
    }
    Ok(calls[..needed].chunks(n_calls.max(1)).take(n_batches).map(|c| c.to_vec()).collect())
}

fn service_draws(params: &SimParams, n: usize, seed: u64, batch: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(substream_seed(seed, "service", batch as u64));
    (0..n).map(|_| draw_service_time(&params.service, &mut rng)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchRun {
    pub outcomes: Vec<SimOutcome>,
    pub batch_means_s: Vec<f64>,
    pub summary: BatchSummary,
}

/// Multiple-replication run; batch `b` draws its service times from its
/// own substream of `seed`.
#[allow(clippy::too_many_arguments)]
pub fn run_batches(
    x: &Deployment,
    calls: &[SimCall],
    grid: &Grid,
    params: &SimParams,
    n_calls: usize,
    n_batches: usize,
    seed: u64,
    resample: bool,
) -> Result<BatchRun, SimError> {
    params.validate()?;
    let slices = batch_slices(calls, n_calls, n_batches, resample, seed)?;
    let outcomes = slices
        .par_iter()
        .enumerate()
        .map(|(b, slice)| simulate_with_service(x, slice, grid, params, &service_draws(params, slice.len(), seed, b)))
        .collect::<Result<Vec<_>, _>>()?;
    let batch_means_s: Vec<f64> = outcomes.iter().map(|o| o.mean_response_s).collect();
    Ok(BatchRun { summary: BatchSummary::from_batches(&batch_means_s), batch_means_s, outcomes })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyComparison {
    pub labels: Vec<String>,
    /// `batch_means_s[p][b]`: mean response of policy `p` on batch `b`.
    pub batch_means_s: Vec<Vec<f64>>,
    pub summaries: Vec<BatchSummary>,
}

impl PolicyComparison {
    /// One row per batch, one column per policy, seconds.
    pub fn table_csv(&self) -> String {
        let mut s = String::from("batch");
        for l in &self.labels {
            s.push(',');
            s.push_str(l);
        }
        s.push('\n');
        let n_batches = self.batch_means_s.first().map_or(0, |v| v.len());
        for b in 0..n_batches {
            s.push_str(&b.to_string());
            for p in &self.batch_means_s {
                s.push_str(&format!(",{}", p[b]));
            }
            s.push('\n');
        }
        s
    }

    /// `label,mean_min,std_min,formatted` rows in minutes.
    pub fn summary_csv(&self) -> String {
        let mut s = String::from("policy,mean_min,std_min,formatted\n");
        for (l, sum) in self.labels.iter().zip(&self.summaries) {
            s.push_str(&format!("{},{},{},{}\n", l, sum.mean / 60.0, sum.std / 60.0, sum.format(60.0)));
        }
        s
    }
}

/// Every policy sees the same call slices and the same service draws.
#[allow(clippy::too_many_arguments)]
pub fn compare_policies(
    policies: &[(String, Deployment)],
    calls: &[SimCall],
    grid: &Grid,
    params: &SimParams,
    n_calls: usize,
    n_batches: usize,
    seed: u64,
    resample: bool,
) -> Result<PolicyComparison, SimError> {
    if policies.is_empty() {
        return Err(SimError::NoPolicies);
    }
    params.validate()?;
    let slices = batch_slices(calls, n_calls, n_batches, resample, seed)?;
    let draws: Vec<Vec<f64>> =
        slices.iter().enumerate().map(|(b, s)| service_draws(params, s.len(), seed, b)).collect();
    let jobs: Vec<(usize, usize)> = (0..policies.len()).flat_map(|p| (0..slices.len()).map(move |b| (p, b))).collect();
    let means = jobs
        .par_iter()
        .map(|&(p, b)| {
            simulate_with_service(&policies[p].1, &slices[b], grid, params, &draws[b]).map(|o| o.mean_response_s)
        })
        .collect::<Result<Vec<f64>, _>>()?;
    let batch_means_s: Vec<Vec<f64>> = means.chunks(slices.len().max(1)).map(|c| c.to_vec()).collect();
    let batch_means_s = if slices.is_empty() { vec![Vec::new(); policies.len()] } else { batch_means_s };
    Ok(PolicyComparison {
        labels: policies.iter().map(|p| p.0.clone()).collect(),
        summaries: batch_means_s.iter().map(|v| BatchSummary::from_batches(v)).collect(),
        batch_means_s,
    })
}
