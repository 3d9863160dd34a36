//! Two-stage stochastic stationing: minimise mean shortfall over sampled
//! demand scenarios.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dispatchflow::{Deployment, FeasibleEdges, FlowError, RecourseNetwork, ShortfallResult};
use crate::ingest::DemandMatrix;
use crate::search::{BranchAndBound, DeploymentObjective, MasterSolver, Optimality, SearchConfig};

#[derive(Debug, Error, PartialEq)]
pub enum StochasticError {
    #[error("demand matrix has no periods to sample from")]
    EmptyDemand,
    #[error("need at least one scenario")]
    NoScenarios,
    #[error("scenario {index} has {found} regions, edges cover {expected}")]
    Dimension { index: usize, expected: usize, found: usize },
    #[error(transparent)]
    Flow(#[from] FlowError),
}

/// Equally weighted demand scenarios.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScenarioSet {
    pub scenarios: Vec<Vec<u32>>,
}

impl ScenarioSet {
    pub fn new(scenarios: Vec<Vec<u32>>) -> Result<Self, StochasticError> {
        if scenarios.is_empty() {
            return Err(StochasticError::NoScenarios);
        }
        Ok(Self { scenarios })
    }

    pub fn len(&self) -> usize {
        self.scenarios.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scenarios.is_empty()
    }

    fn check(&self, n_regions: usize) -> Result<(), StochasticError> {
        if self.scenarios.is_empty() {
            return Err(StochasticError::NoScenarios);
        }
        for (index, d) in self.scenarios.iter().enumerate() {
            if d.len() != n_regions {
                return Err(StochasticError::Dimension { index, expected: n_regions, found: d.len() });
            }
        }
        Ok(())
    }
}

/// Resamples `m` historical period rows uniformly with replacement.
pub fn sample_scenarios(demand: &DemandMatrix, m: usize, seed: u64) -> Result<ScenarioSet, StochasticError> {
    if demand.n_periods() == 0 {
        return Err(StochasticError::EmptyDemand);
    }
    if m == 0 {
        return Err(StochasticError::NoScenarios);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scenarios = (0..m).map(|_| demand.counts[rng.random_range(0..demand.n_periods())].clone()).collect();
    Ok(ScenarioSet { scenarios })
}

/// Total shortfall summed over scenarios, with a wildcard pool.
pub(crate) fn total_shortfall(edges: &FeasibleEdges, scenarios: &[Vec<u32>], x: &[u32], wildcard: u32) -> u64 {
    const PAR_THRESHOLD: usize = 64;
    if scenarios.len() < PAR_THRESHOLD {
        let mut net = RecourseNetwork::new(edges);
        scenarios.iter().map(|d| net.shortfall_total(x, wildcard, d).expect("dimensions checked")).sum()
    } else {
        scenarios
            .par_iter()
            .map_init(
                || RecourseNetwork::new(edges),
                |net, d| net.shortfall_total(x, wildcard, d).expect("dimensions checked"),
            )
            .sum()
    }
}

/// Sum of scenario shortfalls; equal to `M` times the mean.
pub struct StochasticObjective<'a> {
    pub scenarios: &'a ScenarioSet,
    pub edges: &'a FeasibleEdges,
}

impl DeploymentObjective for StochasticObjective<'_> {
    fn n_stations(&self) -> usize {
        self.edges.n_stations
    }

    fn score(&self, x: &[u32], wildcard: u32) -> f64 {
        total_shortfall(self.edges, &self.scenarios.scenarios, x, wildcard) as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StochasticSolution {
    pub x_star: Deployment,
    /// Mean shortfall over scenarios.
    pub objective: f64,
    pub per_scenario: Vec<ShortfallResult>,
    pub optimality: Optimality,
}

pub fn solve_stochastic(
    scenarios: &ScenarioSet,
    fleet: u32,
    edges: &FeasibleEdges,
    config: SearchConfig,
) -> Result<StochasticSolution, StochasticError> {
    solve_stochastic_with(scenarios, fleet, edges, &BranchAndBound::new(config))
}

pub fn solve_stochastic_with(
    scenarios: &ScenarioSet,
    fleet: u32,
    edges: &FeasibleEdges,
    solver: &dyn MasterSolver,
) -> Result<StochasticSolution, StochasticError> {
    scenarios.check(edges.n_regions)?;
    let objective = StochasticObjective { scenarios, edges };
    let result = solver.minimize(&objective, fleet);
    let m = scenarios.len() as f64;
    let optimality = match result.optimality {
        Optimality::Exact => Optimality::Exact,
        Optimality::BoundGap(g) => Optimality::BoundGap(g / m),
    };
    let x_star = Deployment::new(result.x, fleet)?;
    let mut net = RecourseNetwork::new(edges);
    let per_scenario = scenarios.scenarios.iter().map(|d| net.solve(&x_star.x, d)).collect::<Result<Vec<_>, _>>()?;
    let total: u64 = per_scenario.iter().map(|r| r.total).sum();
    Ok(StochasticSolution { x_star, objective: total as f64 / m, per_scenario, optimality })
}

/// Mean shortfall of a fixed stationing.
pub fn evaluate_deployment(
    x: &Deployment,
    scenarios: &ScenarioSet,
    edges: &FeasibleEdges,
) -> Result<f64, StochasticError> {
    scenarios.check(edges.n_regions)?;
    if x.x.len() != edges.n_stations {
        return Err(FlowError::Dimension { what: "stationing", expected: edges.n_stations, found: x.x.len() }.into());
    }
    Ok(total_shortfall(edges, &scenarios.scenarios, &x.x, 0) as f64 / scenarios.len() as f64)
}

/// JSON export shape.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StochasticSolutionDocument {
    pub x: Vec<u32>,
    pub objective: f64,
    pub n: u32,
    #[serde(rename = "M")]
    pub m: usize,
    pub seed: u64,
    pub optimality_flag: Optimality,
}

impl StochasticSolution {
    pub fn document(&self, m: usize, seed: u64) -> StochasticSolutionDocument {
        StochasticSolutionDocument {
            x: self.x_star.x.clone(),
            objective: self.objective,
            n: self.x_star.fleet_bound,
            m,
            seed,
            optimality_flag: self.optimality,
        }
    }
}
