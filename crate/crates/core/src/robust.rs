//! Worst-case stationing over a demand uncertainty set, solved by
//! column-and-constraint generation.
//!
//! The master problem minimises the largest shortfall over a growing pool
//! of demand vectors; the subproblem returns the worst member of the set
//! for the master's stationing. The pool only ever holds members of the
//! set, so the master value is a lower bound and every subproblem value is
//! an upper bound (when the subproblem is exact).

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::demand::{enumerate_set, UncertaintySet};
use crate::dispatchflow::{Deployment, FeasibleEdges, FlowError, RecourseNetwork};
use crate::search::{BranchAndBound, DeploymentObjective, MasterSolver, Optimality, SearchConfig};
use crate::stochastic::{total_shortfall, ScenarioSet};

/// Default bounding-box size below which the subproblem enumerates.
pub const DEFAULT_ENUMERATION_BUDGET: u128 = 2_000_000;

#[derive(Debug, Error, PartialEq)]
pub enum RobustError {
    #[error("epsilon must be positive, got {0}")]
    BadEpsilon(f64),
    #[error("lambda must lie in [0, 1], got {0}")]
    BadLambda(f64),
    #[error("max_iter must be at least 1")]
    NoIterations,
    #[error("uncertainty set has {found} regions, edges cover {expected}")]
    Dimension { expected: usize, found: usize },
    #[error("scenario set is required when lambda < 1")]
    MissingScenarios,
    #[error(transparent)]
    Flow(#[from] FlowError),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WorstCase {
    pub d: Vec<u32>,
    pub shortfall: u64,
    /// False when the greedy fallback was used.
    pub exact: bool,
}

fn shortfall_of(net: &mut RecourseNetwork, x: &[u32], d: &[u32]) -> u64 {
    net.shortfall_total(x, 0, d).expect("dimensions checked")
}

/// Worst member of `set` for stationing `x`; ties go to the
/// lexicographically smallest demand vector.
pub fn worst_case_demand(
    x: &[u32],
    set: &UncertaintySet,
    edges: &FeasibleEdges,
    budget: u128,
) -> Result<WorstCase, RobustError> {
    if set.n_regions() != edges.n_regions {
        return Err(RobustError::Dimension { expected: edges.n_regions, found: set.n_regions() });
    }
    if x.len() != edges.n_stations {
        return Err(FlowError::Dimension { what: "stationing", expected: edges.n_stations, found: x.len() }.into());
    }
    match enumerate_set(set, budget) {
        Ok(members) => {
            // Members arrive in lexicographic order; the reduction keeps the
            // smallest index among maxima, independent of thread scheduling.
            let (idx, shortfall) = members
                .par_iter()
                .enumerate()
                .map_init(|| RecourseNetwork::new(edges), |net, (k, d)| (k, shortfall_of(net, x, d)))
                .reduce(|| (usize::MAX, 0), pick_worst);
            let d = if idx == usize::MAX { vec![0; set.n_regions()] } else { members[idx].clone() };
            Ok(WorstCase { d, shortfall, exact: true })
        }
        Err(_) => {
            log::warn!("uncertainty set too large to enumerate; using greedy ascent");
            Ok(greedy_worst_case(x, set, edges))
        }
    }
}

fn pick_worst(a: (usize, u64), b: (usize, u64)) -> (usize, u64) {
    if a.0 == usize::MAX {
        return b;
    }
    if b.0 == usize::MAX {
        return a;
    }
    match a.1.cmp(&b.1) {
        std::cmp::Ordering::Greater => a,
        std::cmp::Ordering::Less => b,
        std::cmp::Ordering::Equal => {
            if a.0 <= b.0 {
                a
            } else {
                b
            }
        }
    }
}

/// Greedy ascent: add one unit of demand at a time where it raises the
/// shortfall most. Ties on the one-step gain are broken by the two-step
/// gain, then by region index. Ascent continues through zero-gain steps
/// because shortfall never decreases as demand grows.
pub fn greedy_worst_case(x: &[u32], set: &UncertaintySet, edges: &FeasibleEdges) -> WorstCase {
    let n = set.n_regions();
    let mut net = RecourseNetwork::new(edges);
    let mut d = vec![0u32; n];
    let mut cur = shortfall_of(&mut net, x, &d);
    loop {
        let mut best: Option<(usize, u64, u64)> = None;
        for j in 0..n {
            d[j] += 1;
            if set.contains(&d) {
                let one = shortfall_of(&mut net, x, &d) - cur;
                d[j] += 1;
                let two = if set.contains(&d) { shortfall_of(&mut net, x, &d) - cur } else { one };
                d[j] -= 1;
                if best.is_none_or(|(_, b1, b2)| (one, two) > (b1, b2)) {
                    best = Some((j, one, two));
                }
            }
            d[j] -= 1;
        }
        match best {
            Some((j, one, _)) => {
                d[j] += 1;
                cur += one;
            }
            None => break,
        }
    }
    WorstCase { d, shortfall: cur, exact: false }
}

/// Blend of the pool maximum and the scenario mean.
pub struct PoolObjective<'a> {
    pub pool: &'a [Vec<u32>],
    pub edges: &'a FeasibleEdges,
    pub scenarios: Option<&'a ScenarioSet>,
    pub lambda: f64,
}

impl PoolObjective<'_> {
    fn pool_max(&self, x: &[u32], wildcard: u32) -> u64 {
        let mut net = RecourseNetwork::new(self.edges);
        self.pool.iter().map(|d| net.shortfall_total(x, wildcard, d).expect("dimensions checked")).max().unwrap_or(0)
    }

    fn mean(&self, x: &[u32], wildcard: u32) -> f64 {
        match self.scenarios {
            Some(s) => total_shortfall(self.edges, &s.scenarios, x, wildcard) as f64 / s.len() as f64,
            None => 0.0,
        }
    }
}

impl DeploymentObjective for PoolObjective<'_> {
    fn n_stations(&self) -> usize {
        self.edges.n_stations
    }

    fn score(&self, x: &[u32], wildcard: u32) -> f64 {
        let mut s = 0.0;
        if self.lambda > 0.0 {
            s += self.lambda * self.pool_max(x, wildcard) as f64;
        }
        if self.lambda < 1.0 {
            s += (1.0 - self.lambda) * self.mean(x, wildcard);
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CcgIteration {
    pub iter: usize,
    pub lower_bound: f64,
    pub upper_bound: f64,
    pub x: Vec<u32>,
    pub worst_d: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CcgState {
    pub scenario_pool: Vec<Vec<u32>>,
    pub lower_bound: f64,
    pub upper_bound: f64,
    pub iterations: usize,
    pub history: Vec<CcgIteration>,
}

impl CcgState {
    fn new(n_regions: usize) -> Self {
        Self {
            scenario_pool: vec![vec![0; n_regions]],
            lower_bound: f64::NEG_INFINITY,
            upper_bound: f64::INFINITY,
            iterations: 0,
            history: Vec::new(),
        }
    }

    pub fn history_csv(&self) -> String {
        let mut s = String::from("iter,LB,UB\n");
        for h in &self.history {
            s.push_str(&format!("{},{:?},{:?}\n", h.iter, h.lower_bound, h.upper_bound));
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobustSolution {
    pub x_star: Deployment,
    pub worst_case_shortfall: u64,
    pub certifying_demand: Vec<u32>,
    pub converged: bool,
    pub iterations: usize,
    /// Every subproblem was solved by enumeration.
    pub subproblem_exact: bool,
    /// Every master was solved to proven optimality.
    pub master_exact: bool,
    pub alpha: f64,
    pub state: CcgState,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CcgConfig {
    pub epsilon: f64,
    pub max_iter: usize,
    pub enumeration_budget: u128,
    pub search: SearchConfig,
}

impl Default for CcgConfig {
    fn default() -> Self {
        Self {
            epsilon: 1e-6,
            max_iter: 100,
            enumeration_budget: DEFAULT_ENUMERATION_BUDGET,
            search: SearchConfig::default(),
        }
    }
}

/// Blended solution; `objective` is `lambda * worst + (1 - lambda) * mean`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HybridSolution {
    pub x_star: Deployment,
    pub objective: f64,
    pub worst_case_shortfall: u64,
    pub certifying_demand: Vec<u32>,
    pub mean_shortfall: f64,
    pub converged: bool,
    pub subproblem_exact: bool,
    pub state: CcgState,
}

struct Incumbent {
    x: Vec<u32>,
    value: f64,
    worst: WorstCase,
    mean: f64,
}

struct LoopOutcome {
    best: Incumbent,
    state: CcgState,
    converged: bool,
    subproblem_exact: bool,
    master_exact: bool,
}

fn ccg_loop(
    set: &UncertaintySet,
    scenarios: Option<&ScenarioSet>,
    lambda: f64,
    fleet: u32,
    edges: &FeasibleEdges,
    config: &CcgConfig,
    solver: &dyn MasterSolver,
) -> Result<LoopOutcome, RobustError> {
    if !(config.epsilon > 0.0) {
        return Err(RobustError::BadEpsilon(config.epsilon));
    }
    if !(0.0..=1.0).contains(&lambda) {
        return Err(RobustError::BadLambda(lambda));
    }
    if config.max_iter == 0 {
        return Err(RobustError::NoIterations);
    }
    if set.n_regions() != edges.n_regions {
        return Err(RobustError::Dimension { expected: edges.n_regions, found: set.n_regions() });
    }
    if lambda < 1.0 && scenarios.is_none() {
        return Err(RobustError::MissingScenarios);
    }
    if let Some(s) = scenarios {
        if let Some(bad) = s.scenarios.iter().find(|d| d.len() != edges.n_regions) {
            return Err(RobustError::Dimension { expected: edges.n_regions, found: bad.len() });
        }
    }

    let mut state = CcgState::new(set.n_regions());
    let mut best: Option<Incumbent> = None;
    let mut converged = false;
    let mut subproblem_exact = true;
    let mut master_exact = true;

    for iter in 1..=config.max_iter {
        let objective = PoolObjective { pool: &state.scenario_pool, edges, scenarios, lambda };
        let master = solver.minimize(&objective, fleet);
        master_exact &= master.optimality == Optimality::Exact;
        state.lower_bound = state.lower_bound.max(master.lower_bound);

        let worst = worst_case_demand(&master.x, set, edges, config.enumeration_budget)?;
        subproblem_exact &= worst.exact;
        let mean = objective.mean(&master.x, 0);
        let value = lambda * worst.shortfall as f64 + (1.0 - lambda) * mean;
        if best.as_ref().is_none_or(|b| value < b.value) {
            state.upper_bound = value;
            best = Some(Incumbent { x: master.x.clone(), value, worst: worst.clone(), mean });
        }
        state.iterations = iter;
        state.history.push(CcgIteration {
            iter,
            lower_bound: state.lower_bound,
            upper_bound: state.upper_bound,
            x: master.x,
            worst_d: worst.d.clone(),
        });
        log::debug!("ccg iter {iter}: LB {} UB {}", state.lower_bound, state.upper_bound);

        if state.upper_bound - state.lower_bound <= config.epsilon {
            converged = true;
            break;
        }
        if state.scenario_pool.contains(&worst.d) {
            // Only reachable with a heuristic subproblem or inexact master.
            log::warn!("ccg stalled: subproblem returned a pooled demand vector");
            break;
        }
        state.scenario_pool.push(worst.d);
    }
    let best = best.expect("at least one iteration");
    debug_assert!(set.contains(&best.worst.d));
    Ok(LoopOutcome { best, state, converged, subproblem_exact, master_exact })
}

pub fn solve_robust_ccg(
    set: &UncertaintySet,
    fleet: u32,
    edges: &FeasibleEdges,
    config: &CcgConfig,
) -> Result<RobustSolution, RobustError> {
    solve_robust_ccg_with(set, fleet, edges, config, &BranchAndBound::new(config.search))
}

pub fn solve_robust_ccg_with(
    set: &UncertaintySet,
    fleet: u32,
    edges: &FeasibleEdges,
    config: &CcgConfig,
    solver: &dyn MasterSolver,
) -> Result<RobustSolution, RobustError> {
    let out = ccg_loop(set, None, 1.0, fleet, edges, config, solver)?;
    Ok(RobustSolution {
        x_star: Deployment::new(out.best.x, fleet)?,
        worst_case_shortfall: out.best.worst.shortfall,
        certifying_demand: out.best.worst.d,
        converged: out.converged,
        iterations: out.state.iterations,
        subproblem_exact: out.subproblem_exact,
        master_exact: out.master_exact,
        alpha: set.alpha,
        state: out.state,
    })
}

pub fn solve_robust_saa_hybrid(
    set: &UncertaintySet,
    scenarios: &ScenarioSet,
    fleet: u32,
    edges: &FeasibleEdges,
    lambda: f64,
    config: &CcgConfig,
) -> Result<HybridSolution, RobustError> {
    let out = ccg_loop(set, Some(scenarios), lambda, fleet, edges, config, &BranchAndBound::new(config.search))?;
    Ok(HybridSolution {
        x_star: Deployment::new(out.best.x, fleet)?,
        objective: out.best.value,
        worst_case_shortfall: out.best.worst.shortfall,
        certifying_demand: out.best.worst.d,
        mean_shortfall: out.best.mean,
        converged: out.converged,
        subproblem_exact: out.subproblem_exact,
        state: out.state,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobustSolutionDocument {
    pub x: Vec<u32>,
    pub worst_case: u64,
    pub certifying_demand: Vec<u32>,
    pub alpha: f64,
    pub iterations: usize,
    pub converged: bool,
}

impl RobustSolution {
    pub fn document(&self) -> RobustSolutionDocument {
        RobustSolutionDocument {
            x: self.x_star.x.clone(),
            worst_case: self.worst_case_shortfall,
            certifying_demand: self.certifying_demand.clone(),
            alpha: self.alpha,
            iterations: self.iterations,
            converged: self.converged,
        }
    }
}
