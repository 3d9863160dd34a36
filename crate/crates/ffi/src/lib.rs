//! C ABI over the stationing toolkit.
//!
//! Every entry point returns an [`EmsStatus`]. On failure the message is
//! available from [`ems_last_error_message`] on the same thread. Results are
//! written through caller-provided out pointers; panics never cross the
//! boundary.

use std::cell::RefCell;
use std::ffi::{c_char, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::slice;

use emsdeploy::demand::poisson_var;
use emsdeploy::dispatchflow::{min_shortfall, Deployment, FeasibleEdges};
use emsdeploy::geogrid::{build_grid, Bounds, Grid, SyntheticSpeed};
use emsdeploy::search::SearchConfig;
use emsdeploy::simcore::{simulate, ServiceTimeModel, SimCall, SimParams};
use emsdeploy::stochastic::{solve_stochastic, ScenarioSet};

/// Result code of every call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EmsStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    SolverError = 3,
    SimulationError = 4,
    Panic = 5,
}

/// Opaque grid handle; create with `ems_grid_new`, release with
/// `ems_grid_free`.
pub struct EmsGrid {
    grid: Grid,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

struct Fail(EmsStatus, String);

fn fail(status: EmsStatus, msg: impl ToString) -> Fail {
    Fail(status, msg.to_string())
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> EmsStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            EmsStatus::Ok
        }
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            EmsStatus::Panic
        }
    }
}

/// Borrows `len` items; a null pointer is allowed only when `len` is 0.
unsafe fn view<'a, T>(ptr: *const T, len: usize, what: &str) -> Result<&'a [T], Fail> {
    if len == 0 {
        return Ok(&[]);
    }
    if ptr.is_null() {
        return Err(fail(EmsStatus::NullPointer, format!("{what} is null")));
    }
    Ok(slice::from_raw_parts(ptr, len))
}

fn out_ptr<'a, T>(ptr: *mut T, what: &str) -> Result<&'a mut T, Fail> {
    // SAFETY: the caller guarantees a non-null `ptr` is valid for writes.
    unsafe { ptr.as_mut() }.ok_or_else(|| fail(EmsStatus::NullPointer, format!("{what} is null")))
}

unsafe fn edge_list(
    edges: *const usize,
    n_edges: usize,
    n_stations: usize,
    n_regions: usize,
) -> Result<FeasibleEdges, Fail> {
    let flat = view(edges, n_edges * 2, "edges")?;
    let pairs = flat.chunks_exact(2).map(|p| (p[0], p[1])).collect();
    FeasibleEdges::new(n_stations, n_regions, pairs).map_err(|e| fail(EmsStatus::InvalidArgument, e))
}

/// Message for the last failed call on this thread, or null. The pointer
/// stays valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn ems_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(std::ptr::null(), |s| s.as_ptr()))
}

/// Builds a grid with straight-line travel times at `speed_kmh`.
///
/// # Safety
/// `stations` and `hospitals` must point to the given number of cell
/// indices; `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn ems_grid_new(
    min_lat: f64,
    max_lat: f64,
    min_lon: f64,
    max_lon: f64,
    n_rows: usize,
    n_cols: usize,
    speed_kmh: f64,
    stations: *const usize,
    n_stations: usize,
    hospitals: *const usize,
    n_hospitals: usize,
    out: *mut *mut EmsGrid,
) -> EmsStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let bad = |e: emsdeploy::geogrid::GridError| fail(EmsStatus::InvalidArgument, e);
        let stations = view(stations, n_stations, "stations")?.to_vec();
        let hospitals = view(hospitals, n_hospitals, "hospitals")?.to_vec();
        let bounds = Bounds::new(min_lat, max_lat, min_lon, max_lon).map_err(bad)?;
        let grid = build_grid(bounds, n_rows, n_cols, &SyntheticSpeed::new(speed_kmh).map_err(bad)?)
            .and_then(|g| g.with_stations(stations))
            .and_then(|g| g.with_hospitals(hospitals))
            .map_err(bad)?;
        *out = Box::into_raw(Box::new(EmsGrid { grid }));
        Ok(())
    })
}

/// Releases a grid. Null is ignored.
///
/// # Safety
/// `grid` must come from `ems_grid_new` and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn ems_grid_free(grid: *mut EmsGrid) {
    if !grid.is_null() {
        drop(Box::from_raw(grid));
    }
}

/// # Safety
/// `grid` must be a live handle; `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn ems_grid_n_cells(grid: *const EmsGrid, out: *mut usize) -> EmsStatus {
    guard(|| {
        let g = grid.as_ref().ok_or_else(|| fail(EmsStatus::NullPointer, "grid is null"))?;
        *out_ptr(out, "out")? = g.grid.n_cells();
        Ok(())
    })
}

/// Cell containing a point.
///
/// # Safety
/// `grid` must be a live handle; `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn ems_grid_assign_cell(grid: *const EmsGrid, lat: f64, lon: f64, out: *mut usize) -> EmsStatus {
    guard(|| {
        let g = grid.as_ref().ok_or_else(|| fail(EmsStatus::NullPointer, "grid is null"))?;
        *out_ptr(out, "out")? = g.grid.assign_cell(lat, lon).map_err(|e| fail(EmsStatus::InvalidArgument, e))?;
        Ok(())
    })
}

/// Travel time in seconds between two cells.
///
/// # Safety
/// `grid` must be a live handle; `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn ems_grid_travel_time(
    grid: *const EmsGrid,
    from: usize,
    to: usize,
    out: *mut f64,
) -> EmsStatus {
    guard(|| {
        let g = grid.as_ref().ok_or_else(|| fail(EmsStatus::NullPointer, "grid is null"))?;
        let n = g.grid.n_cells();
        if from >= n || to >= n {
            return Err(fail(EmsStatus::InvalidArgument, format!("cell out of range for {n} cells")));
        }
        *out_ptr(out, "out")? = g.grid.travel(from, to);
        Ok(())
    })
}

/// Smallest `k` with `P(Poisson(rate) <= k) >= 1 - alpha`.
///
/// # Safety
/// `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn ems_poisson_var(rate: f64, alpha: f64, out: *mut u32) -> EmsStatus {
    guard(|| {
        *out_ptr(out, "out")? = poisson_var(rate, alpha).map_err(|e| fail(EmsStatus::InvalidArgument, e))?;
        Ok(())
    })
}

/// Minimum unmet demand for stationing `x` and demand `d`. `edges` holds
/// `n_edges` (station, region) pairs, flattened.
///
/// # Safety
/// All arrays must hold the stated number of elements; `out_total` must be
/// valid for writes.
#[no_mangle]
pub unsafe extern "C" fn ems_min_shortfall(
    x: *const u32,
    n_stations: usize,
    d: *const u32,
    n_regions: usize,
    edges: *const usize,
    n_edges: usize,
    out_total: *mut u64,
) -> EmsStatus {
    guard(|| {
        let out = out_ptr(out_total, "out_total")?;
        let x = view(x, n_stations, "x")?.to_vec();
        let d = view(d, n_regions, "d")?;
        let edges = edge_list(edges, n_edges, n_stations, n_regions)?;
        let fleet = x.iter().map(|&v| u64::from(v)).sum::<u64>();
        let fleet = u32::try_from(fleet).map_err(|_| fail(EmsStatus::InvalidArgument, "fleet too large"))?;
        let dep = Deployment::new(x, fleet).map_err(|e| fail(EmsStatus::InvalidArgument, e))?;
        *out = min_shortfall(&dep, d, &edges).map_err(|e| fail(EmsStatus::InvalidArgument, e))?.total;
        Ok(())
    })
}

/// Stochastic stationing over `n_scenarios` demand rows of `n_regions`
/// counts each (row-major). Writes `n_stations` counts to `x_out`, the mean
/// shortfall to `objective_out` and 1 to `exact_out` when optimality was
/// proven within `max_nodes`.
///
/// # Safety
/// All arrays must hold the stated number of elements; out pointers must be
/// valid for writes.
#[no_mangle]
pub unsafe extern "C" fn ems_solve_stochastic(
    scenarios: *const u32,
    n_scenarios: usize,
    n_regions: usize,
    n_stations: usize,
    edges: *const usize,
    n_edges: usize,
    fleet: u32,
    max_nodes: usize,
    x_out: *mut u32,
    objective_out: *mut f64,
    exact_out: *mut i32,
) -> EmsStatus {
    guard(|| {
        if x_out.is_null() && n_stations > 0 {
            return Err(fail(EmsStatus::NullPointer, "x_out is null"));
        }
        let objective_out = out_ptr(objective_out, "objective_out")?;
        let exact_out = out_ptr(exact_out, "exact_out")?;
        if n_regions == 0 {
            return Err(fail(EmsStatus::InvalidArgument, "n_regions must be positive"));
        }
        let flat = view(scenarios, n_scenarios * n_regions, "scenarios")?;
        let scen = ScenarioSet::new(flat.chunks_exact(n_regions).map(<[u32]>::to_vec).collect())
            .map_err(|e| fail(EmsStatus::InvalidArgument, e))?;
        let edges = edge_list(edges, n_edges, n_stations, n_regions)?;
        if max_nodes == 0 {
            return Err(fail(EmsStatus::InvalidArgument, "max_nodes must be positive"));
        }
        let sol = solve_stochastic(&scen, fleet, &edges, SearchConfig { max_nodes })
            .map_err(|e| fail(EmsStatus::SolverError, e))?;
        if n_stations > 0 {
            slice::from_raw_parts_mut(x_out, n_stations).copy_from_slice(&sol.x_star.x);
        }
        *objective_out = sol.objective;
        *exact_out = i32::from(sol.optimality.is_exact());
        Ok(())
    })
}

/// Simulates `n_calls` calls (`times_s` ascending, cells on `grid`) under
/// stationing `x` with lognormal on-scene minutes `(mu, sigma)` and writes
/// the mean response time in seconds.
///
/// # Safety
/// `grid` must be a live handle; arrays must hold the stated number of
/// elements; `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn ems_simulate_mean_response(
    grid: *const EmsGrid,
    x: *const u32,
    n_stations: usize,
    times_s: *const f64,
    cells: *const usize,
    n_calls: usize,
    mu: f64,
    sigma: f64,
    seed: u64,
    out: *mut f64,
) -> EmsStatus {
    guard(|| {
        let g = grid.as_ref().ok_or_else(|| fail(EmsStatus::NullPointer, "grid is null"))?;
        let out = out_ptr(out, "out")?;
        let x = view(x, n_stations, "x")?.to_vec();
        let times = view(times_s, n_calls, "times_s")?;
        let cells = view(cells, n_calls, "cells")?;
        let calls: Vec<SimCall> = times.iter().zip(cells).map(|(&time_s, &cell)| SimCall { time_s, cell }).collect();
        let fleet = u32::try_from(x.iter().map(|&v| u64::from(v)).sum::<u64>())
            .map_err(|_| fail(EmsStatus::InvalidArgument, "fleet too large"))?;
        let dep = Deployment::new(x, fleet).map_err(|e| fail(EmsStatus::InvalidArgument, e))?;
        let params = SimParams { service: ServiceTimeModel::LogNormal { mu, sigma }, ..SimParams::default() };
        *out = simulate(&dep, &calls, &g.grid, &params, seed)
            .map_err(|e| fail(EmsStatus::SimulationError, e))?
            .mean_response_s;
        Ok(())
    })
}
