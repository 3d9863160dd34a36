//! Poisson demand rates and the Value-at-Risk uncertainty set.
//!
//! Rates are fitted at four aggregation levels: a cell on its own, a cell
//! with its lattice neighbours ("local"), every cell within the coverage
//! threshold ("regional"), and the whole city ("global"). The uncertainty
//! set caps each of those sums at the `1 - alpha` quantile of its Poisson
//! law.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::DemandMatrix;

#[derive(Debug, Error, PartialEq)]
pub enum DemandError {
    #[error("demand matrix has no periods")]
    NoPeriods,
    #[error("alpha must lie in (0, 1), got {0}")]
    BadAlpha(f64),
    #[error("rate must be finite and nonnegative, got {0}")]
    BadRate(f64),
    #[error("neighbourhood lists cover {found} regions, demand has {expected}")]
    Dimension { expected: usize, found: usize },
    #[error("uncertainty set box has {size} points, budget is {budget}")]
    ExplicitlyTooLarge { size: u128, budget: u128 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoissonRates {
    pub single: Vec<f64>,
    pub local: Vec<f64>,
    pub regional: Vec<f64>,
    pub global: f64,
}

/// Poisson MLEs (sample means per period) at all four levels.
pub fn fit_rates(
    demand: &DemandMatrix,
    adjacency: &[Vec<usize>],
    regional_ball: &[Vec<usize>],
) -> Result<PoissonRates, DemandError> {
    let periods = demand.n_periods();
    if periods == 0 {
        return Err(DemandError::NoPeriods);
    }
    let n = demand.n_regions();
    for lists in [adjacency, regional_ball] {
        if lists.len() != n {
            return Err(DemandError::Dimension { expected: n, found: lists.len() });
        }
    }
    let mut col_sum = vec![0u64; n];
    let mut grand = 0u64;
    for row in &demand.counts {
        for (j, &c) in row.iter().enumerate() {
            col_sum[j] += c as u64;
            grand += c as u64;
        }
    }
    let p = periods as f64;
    // Sum over a neighbourhood commutes with the mean over periods.
    let agg = |lists: &[Vec<usize>]| -> Vec<f64> {
        lists.iter().map(|nb| nb.iter().map(|&k| col_sum[k]).sum::<u64>() as f64 / p).collect()
    };
    Ok(PoissonRates {
        single: col_sum.iter().map(|&s| s as f64 / p).collect(),
        local: agg(adjacency),
        regional: agg(regional_ball),
        global: grand as f64 / p,
    })
}

/// Smallest `k` with `P(Poisson(rate) <= k) >= 1 - alpha`.
pub fn poisson_var(rate: f64, alpha: f64) -> Result<u32, DemandError> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(DemandError::BadAlpha(alpha));
    }
    if !(rate >= 0.0) || !rate.is_finite() {
        return Err(DemandError::BadRate(rate));
    }
    if rate == 0.0 {
        return Ok(0);
    }
    let target = 1.0 - alpha;
    let limit = (rate + 60.0 * rate.sqrt() + 60.0).ceil() as u64;
    if rate <= 600.0 {
        let mut pmf = (-rate).exp();
        let mut cdf = pmf;
        let mut k = 0u64;
        while cdf < target && k < limit {
            k += 1;
            pmf *= rate / k as f64;
            cdf += pmf;
        }
        return Ok(k as u32);
    }
    // Large rates: unnormalised weights relative to the mode, so nothing
    // underflows; the window holds all mass that is representable.
    let mode = rate.floor() as u64;
    let lo = mode.saturating_sub(limit - mode);
    let mut weights = vec![0.0f64; (limit - lo + 1) as usize];
    let at = |k: u64| (k - lo) as usize;
    weights[at(mode)] = 1.0;
    for k in (mode + 1)..=limit {
        weights[at(k)] = weights[at(k - 1)] * rate / k as f64;
    }
    for k in (lo..mode).rev() {
        weights[at(k)] = weights[at(k + 1)] * (k + 1) as f64 / rate;
    }
    let total: f64 = weights.iter().sum();
    let mut cdf = 0.0;
    for k in lo..=limit {
        cdf += weights[at(k)] / total;
        if cdf >= target {
            return Ok(k as u32);
        }
    }
    Ok(limit as u32)
}

/// Integer demand vectors whose single, local, regional and global sums
/// stay under their VaR caps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UncertaintySet {
    pub alpha: f64,
    pub single_cap: Vec<u32>,
    pub local_cap: Vec<u32>,
    pub regional_cap: Vec<u32>,
    pub global_cap: u32,
    #[serde(skip)]
    pub adjacency: Vec<Vec<usize>>,
    #[serde(skip)]
    pub regional_ball: Vec<Vec<usize>>,
}

/// Exported caps; neighbourhoods are re-derived from the grid on load.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UncertaintySetDocument {
    pub alpha: f64,
    pub single_cap: Vec<u32>,
    pub local_cap: Vec<u32>,
    pub regional_cap: Vec<u32>,
    pub global_cap: u32,
}

impl UncertaintySet {
    pub fn n_regions(&self) -> usize {
        self.single_cap.len()
    }

    pub fn contains(&self, d: &[u32]) -> bool {
        if d.len() != self.n_regions() {
            return false;
        }
        if d.iter().zip(&self.single_cap).any(|(x, c)| x > c) {
            return false;
        }
        let sum_over = |nb: &[usize]| nb.iter().map(|&k| d[k] as u64).sum::<u64>();
        for j in 0..d.len() {
            if sum_over(&self.adjacency[j]) > self.local_cap[j] as u64 {
                return false;
            }
            if sum_over(&self.regional_ball[j]) > self.regional_cap[j] as u64 {
                return false;
            }
        }
        d.iter().map(|&x| x as u64).sum::<u64>() <= self.global_cap as u64
    }

    /// Number of points in the bounding box `prod (single_cap + 1)`.
    pub fn box_size(&self) -> u128 {
        self.single_cap.iter().fold(1u128, |acc, &c| acc.saturating_mul(c as u128 + 1))
    }

    pub fn document(&self) -> UncertaintySetDocument {
        UncertaintySetDocument {
            alpha: self.alpha,
            single_cap: self.single_cap.clone(),
            local_cap: self.local_cap.clone(),
            regional_cap: self.regional_cap.clone(),
            global_cap: self.global_cap,
        }
    }

    pub fn from_document(
        doc: UncertaintySetDocument,
        adjacency: Vec<Vec<usize>>,
        regional_ball: Vec<Vec<usize>>,
    ) -> Result<Self, DemandError> {
        let n = doc.single_cap.len();
        for len in [doc.local_cap.len(), doc.regional_cap.len(), adjacency.len(), regional_ball.len()] {
            if len != n {
                return Err(DemandError::Dimension { expected: n, found: len });
            }
        }
        Ok(Self {
            alpha: doc.alpha,
            single_cap: doc.single_cap,
            local_cap: doc.local_cap,
            regional_cap: doc.regional_cap,
            global_cap: doc.global_cap,
            adjacency,
            regional_ball,
        })
    }
}

pub fn build_uncertainty_set(
    rates: &PoissonRates,
    alpha: f64,
    adjacency: &[Vec<usize>],
    regional_ball: &[Vec<usize>],
) -> Result<UncertaintySet, DemandError> {
    let caps = |v: &[f64]| v.iter().map(|&r| poisson_var(r, alpha)).collect::<Result<Vec<_>, _>>();
    let n = rates.single.len();
    for len in [rates.local.len(), rates.regional.len(), adjacency.len(), regional_ball.len()] {
        if len != n {
            return Err(DemandError::Dimension { expected: n, found: len });
        }
    }
    Ok(UncertaintySet {
        alpha,
        single_cap: caps(&rates.single)?,
        local_cap: caps(&rates.local)?,
        regional_cap: caps(&rates.regional)?,
        global_cap: poisson_var(rates.global, alpha)?,
        adjacency: adjacency.to_vec(),
        regional_ball: regional_ball.to_vec(),
    })
}

/// Every member of the set, in lexicographic order (region 0 most
/// significant). Fails when the bounding box exceeds `size_budget`.
pub fn enumerate_set(set: &UncertaintySet, size_budget: u128) -> Result<Vec<Vec<u32>>, DemandError> {
    let size = set.box_size();
    if size > size_budget {
        return Err(DemandError::ExplicitlyTooLarge { size, budget: size_budget });
    }
    let n = set.n_regions();
    let mut out = Vec::new();
    let mut d = vec![0u32; n];
    // Constraint sums are monotone, so a violated prefix (remaining
    // entries at zero) prunes the whole subtree.
    fn recurse(set: &UncertaintySet, d: &mut Vec<u32>, pos: usize, out: &mut Vec<Vec<u32>>) {
        if pos == d.len() {
            out.push(d.clone());
            return;
        }
        for v in 0..=set.single_cap[pos] {
            d[pos] = v;
            if !set.contains(d) {
                break;
            }
            recurse(set, d, pos + 1, out);
        }
        d[pos] = 0;
    }
    recurse(set, &mut d, 0, &mut out);
    Ok(out)
}
