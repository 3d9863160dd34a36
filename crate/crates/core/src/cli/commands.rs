use std::collections::BTreeMap;
use std::path::PathBuf;

use chrono::{Datelike, Timelike};
use serde::{Deserialize, Serialize};

use super::output::OutputDir;
use super::{CliError, RunConfig};
use crate::analysis::{assemble_tracts, compare_models, read_svi, read_tract_map, report_csv};
use crate::calibrate::{fit_loglog, travel_pairs, verify as verify_travel, CalibrationModel, VerificationReport};
use crate::demand::{build_uncertainty_set, fit_rates, UncertaintySet, UncertaintySetDocument};
use crate::dispatchflow::{Deployment, FeasibleEdges};
use crate::geogrid::{
    build_grid, coverage_ball, derive_adjacency, derive_coverage, load_grid, load_travel_matrix, save_grid, Grid,
    PrecomputedMatrix, SyntheticSpeed, TravelTimeProvider,
};
use crate::ingest::{
    build_demand_matrix, filter_peak, parse_calls, split_train_test, write_calls, CallRecord, CallSchema, DemandMatrix,
    SplitMode, SNAP_CELLS,
};
use crate::robust::{solve_robust_ccg, solve_robust_saa_hybrid, CcgConfig, RobustSolutionDocument};
use crate::search::SearchConfig;
use crate::simcore::{compare_policies, run_batches, sim_calls, ServiceTimeModel, SimCall, SimParams};
use crate::stats::{mean, substream_seed, BatchSummary};
use crate::stochastic::{sample_scenarios, solve_stochastic, ScenarioSet, StochasticSolutionDocument};
use crate::synth::{generate_city, write_svi, write_tract_map, SynthConfig};

pub(crate) struct Ctx<'a> {
    pub cfg: &'a RunConfig,
}

/// `scenarios.json`.
#[derive(Debug, Serialize, Deserialize)]
struct ScenarioFile {
    seed: u64,
    #[serde(rename = "M")]
    m: usize,
    scenarios: Vec<Vec<u32>>,
}

/// `robust_solution.json`: the export shape plus solver exactness flags.
#[derive(Debug, Serialize, Deserialize)]
struct RobustFile {
    #[serde(flatten)]
    doc: RobustSolutionDocument,
    subproblem_exact: bool,
    master_exact: bool,
}

#[derive(Debug, Serialize)]
struct PolicySummary {
    label: String,
    batch_mrt_min: Vec<f64>,
    mean_min: f64,
    std_min: f64,
    formatted: String,
}

impl<'a> Ctx<'a> {
    fn schema(&self) -> CallSchema {
        CallSchema { time_zone: self.cfg.time_zone.clone(), ..CallSchema::default() }
    }

    fn search(&self) -> SearchConfig {
        SearchConfig { max_nodes: self.cfg.max_nodes }
    }

    fn ccg(&self) -> CcgConfig {
        CcgConfig {
            epsilon: self.cfg.epsilon,
            max_iter: self.cfg.max_iter,
            enumeration_budget: u128::from(self.cfg.enumeration_budget),
            search: self.search(),
        }
    }

    /// A configured input path, else an upstream output.
    fn input(
        &self,
        w: &OutputDir,
        configured: &Option<String>,
        name: &str,
        producer: &'static str,
    ) -> Result<PathBuf, CliError> {
        match configured {
            Some(p) => {
                let p = PathBuf::from(p);
                if p.is_file() {
                    Ok(p)
                } else {
                    Err(CliError::Data(format!("input file {} does not exist", p.display())))
                }
            }
            None => w.require(name, producer),
        }
    }

    fn load_grid(&self, w: &OutputDir) -> Result<Grid, CliError> {
        Ok(load_grid(&self.input(w, &self.cfg.grid_json, "grid.json", "grid")?)?)
    }

    fn read_calls(&self, path: &std::path::Path) -> Result<Vec<CallRecord>, CliError> {
        let parsed = parse_calls(path, &self.schema())?;
        if parsed.dropped > 0 {
            log::warn!("{}: dropped {} malformed rows", path.display(), parsed.dropped);
        }
        Ok(parsed.calls)
    }

    fn all_calls(&self, w: &OutputDir) -> Result<Vec<CallRecord>, CliError> {
        self.read_calls(&self.input(w, &self.cfg.calls_csv, "calls.csv", "synth")?)
    }

    fn split_calls(&self, w: &OutputDir, name: &str) -> Result<Vec<CallRecord>, CliError> {
        self.read_calls(&w.require(name, "preprocess")?)
    }

    fn edges(&self, grid: &Grid) -> FeasibleEdges {
        FeasibleEdges::from_coverage(&derive_coverage(grid, self.cfg.coverage_threshold_s))
    }

    fn neighbourhoods(&self, grid: &Grid) -> (Vec<Vec<usize>>, Vec<Vec<usize>>) {
        (derive_adjacency(grid).neighbor_lists(), coverage_ball(grid, self.cfg.coverage_threshold_s))
    }

    fn uncertainty_set(&self, w: &OutputDir, grid: &Grid) -> Result<UncertaintySet, CliError> {
        let doc: UncertaintySetDocument = read_json(&w.require("uncertainty_set.json", "fit")?)?;
        let (adj, ball) = self.neighbourhoods(grid);
        Ok(UncertaintySet::from_document(doc, adj, ball)?)
    }

    fn scenarios(&self, w: &OutputDir) -> Result<(ScenarioSet, ScenarioFile), CliError> {
        let file: ScenarioFile = read_json(&w.require("scenarios.json", "fit")?)?;
        Ok((ScenarioSet::new(file.scenarios.clone())?, file))
    }

    fn sim_params(&self, w: &OutputDir) -> Result<SimParams, CliError> {
        let travel_model = if self.cfg.use_calibration {
            read_json(&w.require("calibration.json", "fit")?)?
        } else {
            CalibrationModel::identity()
        };
        let params = SimParams {
            service: ServiceTimeModel::LogNormal { mu: self.cfg.lognormal_mu, sigma: self.cfg.lognormal_sigma },
            shortfall_threshold_s: self.cfg.shortfall_threshold_s,
            travel_model,
            record_census: false,
        };
        params.validate()?;
        Ok(params)
    }

    fn policy(&self, w: &OutputDir, name: &str) -> Result<Deployment, CliError> {
        #[derive(Deserialize)]
        struct X {
            x: Vec<u32>,
        }
        let x: X = read_json(&w.require(name, "optimize")?)?;
        let total = x.x.iter().sum();
        Ok(Deployment::new(x.x, total)?)
    }
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &std::path::Path) -> Result<T, CliError> {
    let text = std::fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn calls_csv(calls: &[CallRecord], schema: &CallSchema) -> Result<Vec<u8>, CliError> {
    let mut buf = Vec::new();
    write_calls(&mut buf, calls, schema)?;
    Ok(buf)
}

/// Calls inside the grid, each with its cell.
fn placed_calls(calls: &[CallRecord], grid: &Grid) -> Vec<(CallRecord, usize)> {
    calls
        .iter()
        .filter_map(|c| grid.assign_cell_snapped(c.lat, c.lon, SNAP_CELLS).ok().map(|cell| (c.clone(), cell)))
        .collect()
}

fn to_minutes(v: &[f64]) -> Vec<f64> {
    v.iter().map(|s| s / 60.0).collect()
}

pub(crate) fn synth(ctx: &Ctx, w: &mut OutputDir) -> Result<(), CliError> {
    let cfg = ctx.cfg;
    let sc = SynthConfig {
        bounds: cfg.bounds()?,
        rows: cfg.rows,
        cols: cfg.cols,
        speed_kmh: cfg.speed_kmh,
        station_cells: cfg.station_cells.clone(),
        hospital_cells: cfg.hospital_cells.clone(),
        hotspot_cells: cfg.hotspot_cells.clone(),
        n_calls: cfg.synth_calls,
        calls_per_hour: cfg.synth_calls_per_hour,
        time_zone: cfg.time_zone.clone(),
        seed: substream_seed(cfg.seed, "synth", 0),
        ..SynthConfig::default()
    };
    let city = generate_city(&sc)?;
    w.write_bytes("calls.csv", &calls_csv(&city.calls, &ctx.schema())?)?;
    let mut buf = Vec::new();
    write_svi(&mut buf, &city.svi)?;
    w.write_bytes("svi.csv", &buf)?;
    let mut buf = Vec::new();
    write_tract_map(&mut buf, &city.tract_map)?;
    w.write_bytes("tract_map.csv", &buf)?;
    log::info!("synthesised {} calls over {}", city.calls.len(), city.grid);
    Ok(())
}

pub(crate) fn grid(ctx: &Ctx, w: &mut OutputDir) -> Result<(), CliError> {
    let cfg = ctx.cfg;
    let provider: Box<dyn TravelTimeProvider> = match &cfg.travel_matrix_csv {
        Some(p) => Box::new(PrecomputedMatrix(load_travel_matrix(std::path::Path::new(p))?)),
        None => Box::new(SyntheticSpeed::new(cfg.speed_kmh)?),
    };
    let grid = build_grid(cfg.bounds()?, cfg.rows, cfg.cols, provider.as_ref())
        .and_then(|g| g.with_stations(cfg.station_cells.clone()))
        .and_then(|g| g.with_hospitals(cfg.hospital_cells.clone()))
        .map_err(|e| CliError::Config(e.to_string()))?;
    save_grid(&grid, &w.path("grid.json"), "travel_matrix.csv")?;
    w.record_existing("grid.json")?;
    w.record_existing("travel_matrix.csv")?;
    let mut cov = String::from("station,region\n");
    for (i, j) in ctx.edges(&grid).edges() {
        cov.push_str(&format!("{i},{j}\n"));
    }
    w.write_text("coverage.csv", &cov)?;
    Ok(())
}

pub(crate) fn preprocess(ctx: &Ctx, w: &mut OutputDir) -> Result<(), CliError> {
    let cfg = ctx.cfg;
    let grid = ctx.load_grid(w)?;
    let calls = ctx.all_calls(w)?;
    let window = cfg.peak_window();
    let kept = match &window {
        Some(win) => filter_peak(&calls, win),
        None => calls.clone(),
    };
    let (train, test) = split_train_test(&kept, SplitMode::Chronological { fraction: cfg.train_fraction })?;
    let demand = build_demand_matrix(&train, &grid, cfg.period_s, window.as_ref())?;
    let schema = ctx.schema();
    w.write_bytes("train_calls.csv", &calls_csv(&train, &schema)?)?;
    w.write_bytes("test_calls.csv", &calls_csv(&test, &schema)?)?;
    w.write_text("demand_matrix.csv", &demand.to_csv_string())?;
    w.write_json(
        "preprocess_summary.json",
        &serde_json::json!({
            "input_calls": calls.len(),
            "peak_calls": kept.len(),
            "train_calls": train.len(),
            "test_calls": test.len(),
            "periods": demand.n_periods(),
            "demand_total": demand.total(),
            "demand_dropped_calls": demand.dropped_calls,
        }),
    )?;
    Ok(())
}

pub(crate) fn fit(ctx: &Ctx, w: &mut OutputDir) -> Result<(), CliError> {
    let cfg = ctx.cfg;
    let grid = ctx.load_grid(w)?;
    let text = std::fs::read_to_string(w.require("demand_matrix.csv", "preprocess")?)?;
    let demand = DemandMatrix::parse_csv(&text, cfg.period_s)?;
    let (adj, ball) = ctx.neighbourhoods(&grid);
    let rates = fit_rates(&demand, &adj, &ball)?;
    let set = build_uncertainty_set(&rates, cfg.alpha, &adj, &ball)?;
    w.write_json("poisson_rates.json", &rates)?;
    w.write_json("uncertainty_set.json", &set.document())?;

    let seed = substream_seed(cfg.seed, "scenarios", 0);
    let scen = sample_scenarios(&demand, cfg.m, seed)?;
    w.write_json("scenarios.json", &ScenarioFile { seed, m: cfg.m, scenarios: scen.scenarios })?;

    let train = ctx.split_calls(w, "train_calls.csv")?;
    let (pairs, excluded) = travel_pairs(&train, &grid);
    let model = match fit_loglog(&pairs, cfg.trim_p) {
        Ok(m) => m,
        Err(e) => {
            log::warn!("travel calibration failed ({e}); using grid times unchanged");
            CalibrationModel::identity()
        }
    };
    log::info!("calibration from {} pairs, {excluded} calls excluded", pairs.len());
    w.write_json("calibration.json", &model)?;
    let mut csv = String::from("grid_s,reported_s\n");
    for (g, r) in &pairs {
        csv.push_str(&format!("{g},{r}\n"));
    }
    w.write_text("calibration_pairs.csv", &csv)?;
    Ok(())
}

pub(crate) fn optimize(ctx: &Ctx, w: &mut OutputDir) -> Result<(), CliError> {
    let cfg = ctx.cfg;
    let grid = ctx.load_grid(w)?;
    let edges = ctx.edges(&grid);
    let (scen, file) = ctx.scenarios(w)?;
    let set = ctx.uncertainty_set(w, &grid)?;

    let stoch = solve_stochastic(&scen, cfg.n, &edges, ctx.search())?;
    let doc: StochasticSolutionDocument = stoch.document(file.m, file.seed);
    w.write_json("stochastic_solution.json", &doc)?;

    let robust = solve_robust_ccg(&set, cfg.n, &edges, &ctx.ccg())?;
    if !robust.converged {
        log::warn!("robust search stopped before the bounds met");
    }
    w.write_json(
        "robust_solution.json",
        &RobustFile {
            doc: robust.document(),
            subproblem_exact: robust.subproblem_exact,
            master_exact: robust.master_exact,
        },
    )?;
    w.write_text("ccg_history.csv", &robust.state.history_csv())?;

    if let Some(lambda) = cfg.hybrid_lambda {
        let hybrid = solve_robust_saa_hybrid(&set, &scen, cfg.n, &edges, lambda, &ctx.ccg())?;
        w.write_json(
            "hybrid_solution.json",
            &serde_json::json!({
                "x": hybrid.x_star.x,
                "lambda": lambda,
                "objective": hybrid.objective,
                "worst_case": hybrid.worst_case_shortfall,
                "mean_shortfall": hybrid.mean_shortfall,
                "certifying_demand": hybrid.certifying_demand,
                "converged": hybrid.converged,
                "subproblem_exact": hybrid.subproblem_exact,
            }),
        )?;
    }
    Ok(())
}

pub(crate) fn simulate(ctx: &Ctx, w: &mut OutputDir) -> Result<(), CliError> {
    let cfg = ctx.cfg;
    let grid = ctx.load_grid(w)?;
    let params = ctx.sim_params(w)?;
    let test = ctx.split_calls(w, "test_calls.csv")?;
    let placed = placed_calls(&test, &grid);
    let calls: Vec<SimCall> = sim_calls(&placed.iter().map(|p| p.0.clone()).collect::<Vec<_>>(), &grid).0;
    let policies = vec![
        ("stochastic".to_string(), ctx.policy(w, "stochastic_solution.json")?),
        ("robust".to_string(), ctx.policy(w, "robust_solution.json")?),
    ];
    let cmp = compare_policies(&policies, &calls, &grid, &params, cfg.n_calls, cfg.n_batches, cfg.seed, cfg.resample)?;

    let mut labels = cmp.labels.clone();
    let mut batches: Vec<Vec<f64>> = cmp.batch_means_s.iter().map(|b| to_minutes(b)).collect();
    // Reported response times cover the same slices only without resampling.
    if !cfg.resample {
        let reported: Option<Vec<f64>> = placed
            .chunks(cfg.n_calls)
            .take(cfg.n_batches)
            .map(|chunk| {
                let v: Option<Vec<f64>> = chunk.iter().map(|(c, _)| c.reported_response_s).collect();
                v.map(|v| mean(&v) / 60.0)
            })
            .collect();
        match reported {
            Some(r) => {
                labels.push("reported".into());
                batches.push(r);
            }
            None => log::warn!("some test calls lack a reported response time; skipping the reported column"),
        }
    }

    let mut table = String::from("batch");
    for l in &labels {
        table.push_str(&format!(",{l}_mrt_min"));
    }
    table.push('\n');
    for b in 0..cfg.n_batches {
        table.push_str(&b.to_string());
        for col in &batches {
            table.push_str(&format!(",{}", col[b]));
        }
        table.push('\n');
    }
    w.write_text("policy_batches.csv", &table)?;

    let summaries: Vec<PolicySummary> = labels
        .iter()
        .zip(&batches)
        .map(|(l, b)| {
            let s = BatchSummary::from_batches(b);
            PolicySummary {
                label: l.clone(),
                batch_mrt_min: b.clone(),
                mean_min: s.mean,
                std_min: s.std,
                formatted: s.format(1.0),
            }
        })
        .collect();
    let mut csv = String::from("policy,mean_min,std_min,formatted\n");
    for s in &summaries {
        csv.push_str(&format!("{},{},{},{}\n", s.label, s.mean_min, s.std_min, s.formatted));
    }
    w.write_text("policy_summary.csv", &csv)?;
    w.write_json(
        "simulation_summary.json",
        &serde_json::json!({
            "n_calls": cfg.n_calls,
            "n_batches": cfg.n_batches,
            "resample": cfg.resample,
            "seed": cfg.seed,
            "travel_model": params.travel_model,
            "policies": summaries,
        }),
    )?;

    // The first stochastic batch, replayed with its own service draws.
    let first = run_batches(&policies[0].1, &calls, &grid, &params, cfg.n_calls, 1, cfg.seed, cfg.resample)?;
    w.write_text("event_log.csv", &crate::simcore::event_log_csv(&first.outcomes[0].event_log))?;
    Ok(())
}

pub(crate) fn verify(ctx: &Ctx, w: &mut OutputDir) -> Result<(), CliError> {
    let cfg = ctx.cfg;
    let grid = ctx.load_grid(w)?;
    let model: CalibrationModel = read_json(&w.require("calibration.json", "fit")?)?;
    let test = ctx.split_calls(w, "test_calls.csv")?;
    let report = verify_travel(&test, &grid, &model, cfg.verify_batch_size, cfg.verify_batches)?;
    w.write_json("verification.json", &report)?;
    let mut csv = String::from("batch,mean_error_s\n");
    for (b, e) in report.batch_errors.iter().enumerate() {
        csv.push_str(&format!("{b},{e}\n"));
    }
    w.write_text("verification_batches.csv", &csv)?;
    log::info!("calibrated minus reported travel: {} s", report.summary.format(1.0));
    Ok(())
}

#[derive(Debug, Serialize)]
struct CvCell {
    alpha: f64,
    fold: usize,
    mrt_min: Option<f64>,
    worst_case: Option<u64>,
    converged: bool,
    saturated: bool,
    error: Option<String>,
}

pub(crate) fn alpha_cv(ctx: &Ctx, w: &mut OutputDir) -> Result<(), CliError> {
    let cfg = ctx.cfg;
    let grid = ctx.load_grid(w)?;
    let edges = ctx.edges(&grid);
    let params = ctx.sim_params(w)?;
    let train = ctx.split_calls(w, "train_calls.csv")?;
    let (adj, ball) = ctx.neighbourhoods(&grid);
    let fold_seed = substream_seed(cfg.seed, "folds", 0);
    let window = cfg.peak_window();

    let mut cells = Vec::new();
    for fold in 0..cfg.cv_folds {
        let (fit_calls, held) =
            split_train_test(&train, SplitMode::KFold { k: cfg.cv_folds, fold_index: fold, seed: fold_seed })?;
        let demand = build_demand_matrix(&fit_calls, &grid, cfg.period_s, window.as_ref())?;
        let rates = fit_rates(&demand, &adj, &ball)?;
        let (held_calls, _) = sim_calls(&held, &grid);
        for &alpha in &cfg.alphas {
            let cell = (|| -> Result<CvCell, CliError> {
                let set = build_uncertainty_set(&rates, alpha, &adj, &ball)?;
                let sol = solve_robust_ccg(&set, cfg.n, &edges, &ctx.ccg())?;
                if sol.x_star.total() == 0 {
                    return Err(CliError::Solver(
                        "every stationing has zero worst-case shortfall; nothing to simulate".into(),
                    ));
                }
                let run = run_batches(&sol.x_star, &held_calls, &grid, &params, held_calls.len(), 1, cfg.seed, false)?;
                Ok(CvCell {
                    alpha,
                    fold,
                    mrt_min: Some(run.batch_means_s[0] / 60.0),
                    worst_case: Some(sol.worst_case_shortfall),
                    converged: sol.converged,
                    saturated: sol.x_star.x.iter().all(|&v| v == 1),
                    error: None,
                })
            })();
            cells.push(cell.unwrap_or_else(|e| {
                log::warn!("alpha {alpha}, fold {fold}: {e}");
                CvCell {
                    alpha,
                    fold,
                    mrt_min: None,
                    worst_case: None,
                    converged: false,
                    saturated: false,
                    error: Some(e.to_string()),
                }
            }));
        }
    }

    let opt = |v: Option<String>| v.unwrap_or_default();
    let mut csv = String::from("alpha,fold,mrt_min,worst_case,converged,saturated,error\n");
    for c in &cells {
        csv.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            c.alpha,
            c.fold,
            opt(c.mrt_min.map(|v| v.to_string())),
            opt(c.worst_case.map(|v| v.to_string())),
            c.converged,
            c.saturated,
            opt(c.error.as_ref().map(|e| format!("\"{}\"", e.replace('"', "'")))),
        ));
    }
    w.write_text("alpha_cv.csv", &csv)?;

    let mut by_alpha = Vec::new();
    for &alpha in &cfg.alphas {
        let v: Vec<f64> = cells.iter().filter(|c| c.alpha == alpha).filter_map(|c| c.mrt_min).collect();
        let complete = v.len() == cfg.cv_folds;
        by_alpha.push((alpha, complete.then(|| mean(&v))));
    }
    // Lowest mean wins; ties go to the larger alpha (the smaller set).
    let recommended = by_alpha
        .iter()
        .filter_map(|&(a, m)| m.map(|m| (a, m)))
        .min_by(|a, b| a.1.total_cmp(&b.1).then(b.0.total_cmp(&a.0)))
        .map(|(a, _)| a);
    w.write_json(
        "alpha_cv.json",
        &serde_json::json!({
            "folds": cfg.cv_folds,
            "cells": cells,
            "mean_mrt_min": by_alpha.iter().map(|(a, m)| serde_json::json!({"alpha": a, "mrt_min": m})).collect::<Vec<_>>(),
            "recommended_alpha": recommended,
        }),
    )?;
    Ok(())
}

pub(crate) fn fleet_sweep(ctx: &Ctx, w: &mut OutputDir) -> Result<(), CliError> {
    let cfg = ctx.cfg;
    let grid = ctx.load_grid(w)?;
    let edges = ctx.edges(&grid);
    let params = ctx.sim_params(w)?;
    let (scen, _) = ctx.scenarios(w)?;
    let set = ctx.uncertainty_set(w, &grid)?;
    let test = ctx.split_calls(w, "test_calls.csv")?;
    let (calls, _) = sim_calls(&test, &grid);
    let mut csv = String::from("n,stochastic_mrt_min,robust_mrt_min\n");
    for n in cfg.fleet_min..=cfg.fleet_max {
        let s = solve_stochastic(&scen, n, &edges, ctx.search())?;
        let r = solve_robust_ccg(&set, n, &edges, &ctx.ccg())?;
        let policies = vec![("stochastic".to_string(), s.x_star), ("robust".to_string(), r.x_star)];
        let cmp =
            compare_policies(&policies, &calls, &grid, &params, cfg.n_calls, cfg.n_batches, cfg.seed, cfg.resample)?;
        csv.push_str(&format!("{n},{},{}\n", cmp.summaries[0].mean / 60.0, cmp.summaries[1].mean / 60.0));
        log::info!("fleet {n} done");
    }
    w.write_text("fleet_sweep.csv", &csv)?;
    Ok(())
}

pub(crate) fn analyze(ctx: &Ctx, w: &mut OutputDir) -> Result<(), CliError> {
    let cfg = ctx.cfg;
    let grid = ctx.load_grid(w)?;
    let calls = ctx.all_calls(w)?;
    let tract_map =
        read_tract_map(std::fs::File::open(ctx.input(w, &cfg.tract_map_csv, "tract_map.csv", "synth")?)?)?;
    let svi = read_svi(std::fs::File::open(ctx.input(w, &cfg.svi_csv, "svi.csv", "synth")?)?)?;
    let ds = assemble_tracts(&calls, &grid, &tract_map, &svi)?;

    let mut csv = String::from("tract_id,mean_travel_min");
    for f in &ds.feature_names {
        csv.push_str(&format!(",{f}"));
    }
    csv.push('\n');
    for (i, id) in ds.tract_ids.iter().enumerate() {
        csv.push_str(&format!("{id},{}", ds.y[i]));
        for v in &ds.x[i] {
            csv.push_str(&format!(",{v}"));
        }
        csv.push('\n');
    }
    w.write_text("tract_dataset.csv", &csv)?;

    let reports =
        compare_models(&ds, cfg.analysis_folds, substream_seed(cfg.seed, "analysis-folds", 0), &cfg.lambda_grid)?;
    w.write_text("analysis_report.csv", &report_csv(&reports))?;
    w.write_json(
        "analysis.json",
        &serde_json::json!({
            "tracts": ds.n_rows(),
            "dropped_no_svi": ds.dropped_no_svi,
            "dropped_calls": ds.dropped_calls,
            "folds": cfg.analysis_folds,
            "models": reports,
        }),
    )?;
    Ok(())
}

pub(crate) fn plotdata(ctx: &Ctx, w: &mut OutputDir) -> Result<(), CliError> {
    let grid = ctx.load_grid(w)?;
    let mut calls = ctx.split_calls(w, "train_calls.csv")?;
    calls.extend(ctx.split_calls(w, "test_calls.csv")?);

    let mut temporal = BTreeMap::new();
    for c in &calls {
        *temporal.entry((c.timestamp.weekday().num_days_from_monday(), c.timestamp.hour())).or_insert(0usize) += 1;
    }
    let mut csv = String::from("weekday,hour,count\n");
    for day in 0..7 {
        for hour in 0..24 {
            csv.push_str(&format!("{day},{hour},{}\n", temporal.get(&(day, hour)).unwrap_or(&0)));
        }
    }
    w.write_text("plot_temporal_heatmap.csv", &csv)?;

    let mut counts = vec![0usize; grid.n_cells()];
    for (_, cell) in placed_calls(&calls, &grid) {
        counts[cell] += 1;
    }
    let mut csv = String::from("cell,lat,lon,count\n");
    for (cell, n) in counts.iter().enumerate() {
        let c = grid.cell_centers[cell];
        csv.push_str(&format!("{cell},{},{},{n}\n", c.lat, c.lon));
    }
    w.write_text("plot_spatial_heatmap.csv", &csv)?;

    let model: CalibrationModel = read_json(&w.require("calibration.json", "fit")?)?;
    let text = std::fs::read_to_string(w.require("calibration_pairs.csv", "fit")?)?;
    let mut csv = String::from("grid_s,reported_s,fitted_s\n");
    for line in text.lines().skip(1) {
        let g: f64 = line
            .split(',')
            .next()
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| CliError::Data(format!("bad calibration pair {line:?}")))?;
        csv.push_str(&format!("{line},{}\n", model.apply(g)));
    }
    w.write_text("plot_regression_scatter.csv", &csv)?;

    let report: VerificationReport = read_json(&w.require("verification.json", "verify")?)?;
    let mut csv = String::from("batch,mean_error_s\n");
    for (b, e) in report.batch_errors.iter().enumerate() {
        csv.push_str(&format!("{b},{e}\n"));
    }
    w.write_text("plot_verification_points.csv", &csv)?;

    for (label, file) in [("stochastic", "stochastic_solution.json"), ("robust", "robust_solution.json")] {
        let x = ctx.policy(w, file)?;
        let mut csv = String::from("station,cell,lat,lon,count\n");
        for (i, (&cell, &k)) in grid.station_cells.iter().zip(&x.x).enumerate() {
            let c = grid.cell_centers[cell];
            csv.push_str(&format!("{i},{cell},{},{},{k}\n", c.lat, c.lon));
        }
        w.write_text(&format!("plot_stationing_{label}.csv"), &csv)?;
    }
    Ok(())
}
