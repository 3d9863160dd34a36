//! Uniform rectangular discretization of a city.
//!
//! Cells are indexed row-major: row 0 holds the southernmost cells
//! (smallest latitude) and column 0 the westernmost. Every call, station
//! and hospital is treated as sitting at the center of its cell, and all
//! travel is measured between cell centers.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Mean Earth radius in kilometres.
pub const EARTH_RADIUS_KM: f64 = 6371.0;

/// Default coverage radius: ten minutes.
pub const DEFAULT_COVERAGE_THRESHOLD_S: f64 = 600.0;

#[derive(Debug, Error)]
pub enum GridError {
    #[error("degenerate bounds: {0}")]
    DegenerateBounds(String),
    #[error("grid needs at least one row and one column (got {n_rows}x{n_cols})")]
    EmptyGrid { n_rows: usize, n_cols: usize },
    #[error("speed must be positive (got {0} km/h)")]
    NonPositiveSpeed(f64),
    #[error("point ({lat}, {lon}) lies outside the grid bounds")]
    OutOfBounds { lat: f64, lon: f64 },
    #[error("travel matrix row {row}, column {col}: {reason}")]
    MatrixEntry { row: usize, col: usize, reason: String },
    #[error("travel matrix has side {found}, expected {expected}")]
    MatrixSize { expected: usize, found: usize },
    #[error("cell index {index} is out of range for a grid of {cells} cells ({what})")]
    BadCellIndex { index: usize, cells: usize, what: &'static str },
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed grid document: {0}")]
    Json(#[from] serde_json::Error),
}

/// A latitude/longitude pair in degrees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatLon {
    pub lat: f64,
    pub lon: f64,
}

impl LatLon {
    pub fn new(lat: f64, lon: f64) -> Self {
        Self { lat, lon }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub min_lat: f64,
    pub max_lat: f64,
    pub min_lon: f64,
    pub max_lon: f64,
}

impl Bounds {
    pub fn new(min_lat: f64, max_lat: f64, min_lon: f64, max_lon: f64) -> Result<Self, GridError> {
        let b = Self { min_lat, max_lat, min_lon, max_lon };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<(), GridError> {
        let finite = [self.min_lat, self.max_lat, self.min_lon, self.max_lon].iter().all(|v| v.is_finite());
        if !finite {
            return Err(GridError::DegenerateBounds("non-finite coordinate".into()));
        }
        if !(self.min_lat < self.max_lat) {
            return Err(GridError::DegenerateBounds(format!(
                "min_lat {} must be below max_lat {} (zero-area rectangle)",
                self.min_lat, self.max_lat
            )));
        }
        if !(self.min_lon < self.max_lon) {
            return Err(GridError::DegenerateBounds(format!(
                "min_lon {} must be below max_lon {} (zero-area rectangle)",
                self.min_lon, self.max_lon
            )));
        }
        Ok(())
    }
}

/// Great-circle distance in kilometres.
pub fn haversine_km(a: LatLon, b: LatLon) -> f64 {
    let (lat1, lat2) = (a.lat.to_radians(), b.lat.to_radians());
    let dlat = lat2 - lat1;
    let dlon = (b.lon - a.lon).to_radians();
    let h = (dlat / 2.0).sin().powi(2) + lat1.cos() * lat2.cos() * (dlon / 2.0).sin().powi(2);
    2.0 * EARTH_RADIUS_KM * h.sqrt().min(1.0).asin()
}

/// Straight-line travel time in seconds at a constant speed.
pub fn synthetic_travel_time(a: LatLon, b: LatLon, speed_kmh: f64) -> Result<f64, GridError> {
    if !(speed_kmh > 0.0) || !speed_kmh.is_finite() {
        return Err(GridError::NonPositiveSpeed(speed_kmh));
    }
    Ok(haversine_km(a, b) / speed_kmh * 3600.0)
}

/// Dense square matrix of travel times in seconds, row = origin.
#[derive(Debug, Clone, PartialEq)]
pub struct TravelMatrix {
    side: usize,
    data: Vec<f64>,
}

impl TravelMatrix {
    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self, GridError> {
        let side = rows.len();
        let mut data = Vec::with_capacity(side * side);
        for (r, row) in rows.into_iter().enumerate() {
            if row.len() != side {
                return Err(GridError::MatrixEntry {
                    row: r,
                    col: row.len(),
                    reason: format!("row has {} entries, matrix must be {side}x{side}", row.len()),
                });
            }
            data.extend(row);
        }
        let m = Self { side, data };
        m.validate()?;
        Ok(m)
    }

    fn validate(&self) -> Result<(), GridError> {
        for r in 0..self.side {
            for c in 0..self.side {
                let v = self.get(r, c);
                if !v.is_finite() {
                    return Err(GridError::MatrixEntry { row: r, col: c, reason: format!("non-finite value {v}") });
                }
                if v < 0.0 {
                    return Err(GridError::MatrixEntry { row: r, col: c, reason: format!("negative value {v}") });
                }
                if r == c && v != 0.0 {
                    return Err(GridError::MatrixEntry {
                        row: r,
                        col: c,
                        reason: format!("diagonal must be 0, got {v}"),
                    });
                }
            }
        }
        Ok(())
    }

    pub fn side(&self) -> usize {
        self.side
    }

    #[inline]
    pub fn get(&self, from: usize, to: usize) -> f64 {
        self.data[from * self.side + to]
    }

    pub fn row(&self, from: usize) -> &[f64] {
        &self.data[from * self.side..(from + 1) * self.side]
    }

    pub fn is_symmetric(&self) -> bool {
        (0..self.side).all(|r| (0..r).all(|c| self.get(r, c) == self.get(c, r)))
    }

    /// Headerless CSV, one origin per line.
    pub fn to_csv_string(&self) -> String {
        let mut out = String::new();
        for r in 0..self.side {
            let line: Vec<String> = self.row(r).iter().map(|v| format_seconds(*v)).collect();
            out.push_str(&line.join(","));
            out.push('\n');
        }
        out
    }

    pub fn parse_csv(text: &str) -> Result<Self, GridError> {
        let mut rows = Vec::new();
        for (r, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let mut row = Vec::new();
            for (c, field) in line.split(',').enumerate() {
                let v: f64 = field.trim().parse().map_err(|_| GridError::MatrixEntry {
                    row: r,
                    col: c,
                    reason: format!("not a number: {:?}", field.trim()),
                })?;
                if v < 0.0 {
                    return Err(GridError::MatrixEntry { row: r, col: c, reason: format!("negative value {v}") });
                }
                row.push(v);
            }
            rows.push(row);
        }
        Self::from_rows(rows)
    }
}

/// Shortest decimal representation that round-trips exactly.
fn format_seconds(v: f64) -> String {
    format!("{v:?}")
}

pub fn load_travel_matrix(path: &Path) -> Result<TravelMatrix, GridError> {
    let text = fs::read_to_string(path).map_err(|source| GridError::Io { path: path.to_path_buf(), source })?;
    TravelMatrix::parse_csv(&text)
}

pub fn save_travel_matrix(matrix: &TravelMatrix, path: &Path) -> Result<(), GridError> {
    fs::write(path, matrix.to_csv_string()).map_err(|source| GridError::Io { path: path.to_path_buf(), source })
}

/// Source of pairwise travel times between cell centers.
pub trait TravelTimeProvider {
    fn travel_matrix(&self, centers: &[LatLon]) -> Result<TravelMatrix, GridError>;
}

/// Constant-speed great-circle travel.
#[derive(Debug, Clone, Copy)]
pub struct SyntheticSpeed {
    pub speed_kmh: f64,
}

impl SyntheticSpeed {
    pub fn new(speed_kmh: f64) -> Result<Self, GridError> {
        if !(speed_kmh > 0.0) || !speed_kmh.is_finite() {
            return Err(GridError::NonPositiveSpeed(speed_kmh));
        }
        Ok(Self { speed_kmh })
    }
}

impl TravelTimeProvider for SyntheticSpeed {
    fn travel_matrix(&self, centers: &[LatLon]) -> Result<TravelMatrix, GridError> {
        let n = centers.len();
        let mut data = vec![0.0; n * n];
        for i in 0..n {
            for j in (i + 1)..n {
                let t = synthetic_travel_time(centers[i], centers[j], self.speed_kmh)?;
                data[i * n + j] = t;
                data[j * n + i] = t;
            }
        }
        Ok(TravelMatrix { side: n, data })
    }
}

/// A matrix computed elsewhere, e.g. by a road-network router.
#[derive(Debug, Clone)]
pub struct PrecomputedMatrix(pub TravelMatrix);

impl TravelTimeProvider for PrecomputedMatrix {
    fn travel_matrix(&self, centers: &[LatLon]) -> Result<TravelMatrix, GridError> {
        if self.0.side() != centers.len() {
            return Err(GridError::MatrixSize { expected: centers.len(), found: self.0.side() });
        }
        Ok(self.0.clone())
    }
}

#[derive(Debug, Clone)]
pub struct Grid {
    pub n_rows: usize,
    pub n_cols: usize,
    pub bounds: Bounds,
    pub cell_centers: Vec<LatLon>,
    pub travel_time_s: TravelMatrix,
    /// Cells hosting ambulance stations, in station-index order.
    pub station_cells: Vec<usize>,
    pub hospital_cells: Vec<usize>,
}

impl fmt::Display for Grid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}x{} grid, {} stations, {} hospitals",
            self.n_rows,
            self.n_cols,
            self.station_cells.len(),
            self.hospital_cells.len()
        )
    }
}

/// Lays an `n_rows` x `n_cols` lattice over `bounds` and fills the travel
/// matrix from `provider`. Stations and hospitals start empty.
pub fn build_grid(
    bounds: Bounds,
    n_rows: usize,
    n_cols: usize,
    provider: &dyn TravelTimeProvider,
) -> Result<Grid, GridError> {
    bounds.validate()?;
    if n_rows == 0 || n_cols == 0 {
        return Err(GridError::EmptyGrid { n_rows, n_cols });
    }
    let mut cell_centers = Vec::with_capacity(n_rows * n_cols);
    for r in 0..n_rows {
        let lat = 0.5
            * (edge(bounds.min_lat, bounds.max_lat, n_rows, r) + edge(bounds.min_lat, bounds.max_lat, n_rows, r + 1));
        for c in 0..n_cols {
            let lon = 0.5
                * (edge(bounds.min_lon, bounds.max_lon, n_cols, c)
                    + edge(bounds.min_lon, bounds.max_lon, n_cols, c + 1));
            cell_centers.push(LatLon { lat, lon });
        }
    }
    let travel_time_s = provider.travel_matrix(&cell_centers)?;
    if travel_time_s.side() != cell_centers.len() {
        return Err(GridError::MatrixSize { expected: cell_centers.len(), found: travel_time_s.side() });
    }
    travel_time_s.validate()?;
    Ok(Grid {
        n_rows,
        n_cols,
        bounds,
        cell_centers,
        travel_time_s,
        station_cells: Vec::new(),
        hospital_cells: Vec::new(),
    })
}

/// Coordinate of the `k`-th cell boundary along one axis.
#[inline]
pub fn edge(min: f64, max: f64, n: usize, k: usize) -> f64 {
    if k == n {
        max
    } else {
        min + (max - min) * (k as f64) / (n as f64)
    }
}

/// Index along one axis; points on an interior boundary go to the higher
/// index, the outer maximum belongs to the last cell.
fn axis_index(v: f64, min: f64, max: f64, n: usize) -> usize {
    let t = (v - min) / (max - min) * n as f64;
    let mut k = (t.floor().max(0.0) as usize).min(n - 1);
    while k > 0 && v < edge(min, max, n, k) {
        k -= 1;
    }
    while k + 1 < n && v >= edge(min, max, n, k + 1) {
        k += 1;
    }
    k
}

impl Grid {
    pub fn n_cells(&self) -> usize {
        self.n_rows * self.n_cols
    }

    pub fn n_stations(&self) -> usize {
        self.station_cells.len()
    }

    pub fn row_col(&self, cell: usize) -> (usize, usize) {
        (cell / self.n_cols, cell % self.n_cols)
    }

    pub fn cell_at(&self, row: usize, col: usize) -> usize {
        row * self.n_cols + col
    }

    pub fn cell_height_deg(&self) -> f64 {
        (self.bounds.max_lat - self.bounds.min_lat) / self.n_rows as f64
    }

    pub fn cell_width_deg(&self) -> f64 {
        (self.bounds.max_lon - self.bounds.min_lon) / self.n_cols as f64
    }

    pub fn with_stations(mut self, station_cells: Vec<usize>) -> Result<Self, GridError> {
        check_cells(&station_cells, self.n_cells(), "station")?;
        self.station_cells = station_cells;
        Ok(self)
    }

    pub fn with_hospitals(mut self, hospital_cells: Vec<usize>) -> Result<Self, GridError> {
        check_cells(&hospital_cells, self.n_cells(), "hospital")?;
        self.hospital_cells = hospital_cells;
        Ok(self)
    }

    pub fn validate(&self) -> Result<(), GridError> {
        self.bounds.validate()?;
        if self.n_rows == 0 || self.n_cols == 0 {
            return Err(GridError::EmptyGrid { n_rows: self.n_rows, n_cols: self.n_cols });
        }
        if self.cell_centers.len() != self.n_cells() {
            return Err(GridError::MatrixSize { expected: self.n_cells(), found: self.cell_centers.len() });
        }
        if self.travel_time_s.side() != self.n_cells() {
            return Err(GridError::MatrixSize { expected: self.n_cells(), found: self.travel_time_s.side() });
        }
        self.travel_time_s.validate()?;
        check_cells(&self.station_cells, self.n_cells(), "station")?;
        check_cells(&self.hospital_cells, self.n_cells(), "hospital")
    }

    /// Containing cell of a point that must lie inside the bounds.
    pub fn assign_cell(&self, lat: f64, lon: f64) -> Result<usize, GridError> {
        self.assign_cell_snapped(lat, lon, 0.0)
    }

    /// Like [`Grid::assign_cell`] but points up to `snap_cells` cell widths
    /// outside the rectangle are moved onto the nearest border cell.
    pub fn assign_cell_snapped(&self, lat: f64, lon: f64, snap_cells: f64) -> Result<usize, GridError> {
        let b = &self.bounds;
        let lat_tol = snap_cells * self.cell_height_deg();
        let lon_tol = snap_cells * self.cell_width_deg();
        if !lat.is_finite()
            || !lon.is_finite()
            || lat < b.min_lat - lat_tol
            || lat > b.max_lat + lat_tol
            || lon < b.min_lon - lon_tol
            || lon > b.max_lon + lon_tol
        {
            return Err(GridError::OutOfBounds { lat, lon });
        }
        let lat = lat.clamp(b.min_lat, b.max_lat);
        let lon = lon.clamp(b.min_lon, b.max_lon);
        let row = axis_index(lat, b.min_lat, b.max_lat, self.n_rows);
        let col = axis_index(lon, b.min_lon, b.max_lon, self.n_cols);
        Ok(self.cell_at(row, col))
    }

    /// Travel time between two stations' cells or any two cells.
    #[inline]
    pub fn travel(&self, from_cell: usize, to_cell: usize) -> f64 {
        self.travel_time_s.get(from_cell, to_cell)
    }
}

fn check_cells(cells: &[usize], n: usize, what: &'static str) -> Result<(), GridError> {
    match cells.iter().find(|&&c| c >= n) {
        Some(&index) => Err(GridError::BadCellIndex { index, cells: n, what }),
        None => Ok(()),
    }
}

/// Queen (8-neighbour) adjacency between regions, diagonal included.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AdjacencyMatrix {
    n: usize,
    entries: Vec<bool>,
}

impl AdjacencyMatrix {
    pub fn size(&self) -> usize {
        self.n
    }

    pub fn get(&self, a: usize, b: usize) -> bool {
        self.entries[a * self.n + b]
    }

    pub fn neighbors(&self, j: usize) -> Vec<usize> {
        (0..self.n).filter(|&k| self.get(j, k)).collect()
    }

    pub fn neighbor_lists(&self) -> Vec<Vec<usize>> {
        (0..self.n).map(|j| self.neighbors(j)).collect()
    }
}

pub fn derive_adjacency(grid: &Grid) -> AdjacencyMatrix {
    let n = grid.n_cells();
    let mut entries = vec![false; n * n];
    for a in 0..n {
        let (ra, ca) = grid.row_col(a);
        for b in 0..n {
            let (rb, cb) = grid.row_col(b);
            entries[a * n + b] = ra.abs_diff(rb) <= 1 && ca.abs_diff(cb) <= 1;
        }
    }
    AdjacencyMatrix { n, entries }
}

/// Station x region reachability within `threshold_s`.
#[derive(Debug, Clone, PartialEq)]
pub struct CoverageMatrix {
    pub n_stations: usize,
    pub n_regions: usize,
    pub threshold_s: f64,
    entries: Vec<bool>,
}

impl CoverageMatrix {
    pub fn get(&self, station: usize, region: usize) -> bool {
        self.entries[station * self.n_regions + region]
    }

    /// Feasible dispatch edges `(station, region)` in row-major order.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for i in 0..self.n_stations {
            for j in 0..self.n_regions {
                if self.get(i, j) {
                    out.push((i, j));
                }
            }
        }
        out
    }

    pub fn stations_covering(&self, region: usize) -> Vec<usize> {
        (0..self.n_stations).filter(|&i| self.get(i, region)).collect()
    }
}

pub fn derive_coverage(grid: &Grid, threshold_s: f64) -> CoverageMatrix {
    let n_regions = grid.n_cells();
    let n_stations = grid.n_stations();
    let mut entries = Vec::with_capacity(n_stations * n_regions);
    for &cell in &grid.station_cells {
        entries.extend(grid.travel_time_s.row(cell).iter().map(|&t| t <= threshold_s));
    }
    CoverageMatrix { n_stations, n_regions, threshold_s, entries }
}

/// For every region, the regions reachable from it within `threshold_s`.
pub fn coverage_ball(grid: &Grid, threshold_s: f64) -> Vec<Vec<usize>> {
    (0..grid.n_cells())
        .map(|j| {
            grid.travel_time_s.row(j).iter().enumerate().filter(|(_, &t)| t <= threshold_s).map(|(k, _)| k).collect()
        })
        .collect()
}

/// On-disk form of a [`Grid`]; the travel matrix lives in a sibling CSV.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GridDocument {
    pub n_rows: usize,
    pub n_cols: usize,
    pub bounds: Bounds,
    pub cell_centers: Vec<LatLon>,
    pub station_cells: Vec<usize>,
    pub hospital_cells: Vec<usize>,
    pub travel_time_ref: String,
}

/// Writes `<stem>.json` and the travel matrix CSV named by
/// `travel_file` next to it.
pub fn save_grid(grid: &Grid, json_path: &Path, travel_file: &str) -> Result<(), GridError> {
    let doc = GridDocument {
        n_rows: grid.n_rows,
        n_cols: grid.n_cols,
        bounds: grid.bounds,
        cell_centers: grid.cell_centers.clone(),
        station_cells: grid.station_cells.clone(),
        hospital_cells: grid.hospital_cells.clone(),
        travel_time_ref: travel_file.to_string(),
    };
    let dir = json_path.parent().unwrap_or_else(|| Path::new("."));
    save_travel_matrix(&grid.travel_time_s, &dir.join(travel_file))?;
    let text = serde_json::to_string_pretty(&doc)?;
    fs::write(json_path, text).map_err(|source| GridError::Io { path: json_path.to_path_buf(), source })
}

pub fn load_grid(json_path: &Path) -> Result<Grid, GridError> {
    let text =
        fs::read_to_string(json_path).map_err(|source| GridError::Io { path: json_path.to_path_buf(), source })?;
    let doc: GridDocument = serde_json::from_str(&text)?;
    let dir = json_path.parent().unwrap_or_else(|| Path::new("."));
    let travel_time_s = load_travel_matrix(&dir.join(&doc.travel_time_ref))?;
    let grid = Grid {
        n_rows: doc.n_rows,
        n_cols: doc.n_cols,
        bounds: doc.bounds,
        cell_centers: doc.cell_centers,
        travel_time_s,
        station_cells: doc.station_cells,
        hospital_cells: doc.hospital_cells,
    };
    grid.validate()?;
    Ok(grid)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_grid(rows: usize, cols: usize) -> Grid {
        let b = Bounds::new(30.0, 30.0 + 0.01 * rows as f64, -97.8, -97.8 + 0.01 * cols as f64).unwrap();
        build_grid(b, rows, cols, &SyntheticSpeed::new(40.0).unwrap()).unwrap()
    }

    // Textbook haversine written separately from the library routine.
    fn oracle_haversine_km(a: (f64, f64), b: (f64, f64)) -> f64 {
        let to_rad = std::f64::consts::PI / 180.0;
        let (p1, p2) = (a.0 * to_rad, b.0 * to_rad);
        let dp = p2 - p1;
        let dl = (b.1 - a.1) * to_rad;
        let s = (dp * 0.5).sin() * (dp * 0.5).sin() + p1.cos() * p2.cos() * (dl * 0.5).sin() * (dl * 0.5).sin();
        let c = 2.0 * s.sqrt().atan2((1.0 - s).sqrt());
        6371.0 * c
    }

    #[test]
    fn single_cell_grid_has_zero_matrix() {
        let g = unit_grid(1, 1);
        assert_eq!(g.n_cells(), 1);
        assert_eq!(g.travel_time_s.get(0, 0), 0.0);
    }

    #[test]
    fn two_by_two_matches_hand_haversine() {
        let b = Bounds::new(30.0, 30.2, -97.9, -97.7).unwrap();
        let g = build_grid(b, 2, 2, &SyntheticSpeed::new(50.0).unwrap()).unwrap();
        let centers = [(30.05, -97.85), (30.05, -97.75), (30.15, -97.85), (30.15, -97.75)];
        for (k, c) in centers.iter().enumerate() {
            assert!((g.cell_centers[k].lat - c.0).abs() < 1e-12);
            assert!((g.cell_centers[k].lon - c.1).abs() < 1e-12);
        }
        assert!(g.travel_time_s.is_symmetric());
        for i in 0..4 {
            assert_eq!(g.travel_time_s.get(i, i), 0.0);
            for j in 0..4 {
                if i != j {
                    let expect = oracle_haversine_km(centers[i], centers[j]) / 50.0 * 3600.0;
                    let got = g.travel_time_s.get(i, j);
                    assert!((got - expect).abs() <= 1e-9 * expect, "{i}->{j}: {got} vs {expect}");
                }
            }
        }
    }

    #[test]
    fn hundred_region_config() {
        let b = Bounds::new(30.09, 30.52, -97.94, -97.56).unwrap();
        let g = build_grid(b, 10, 10, &SyntheticSpeed::new(48.0).unwrap()).unwrap();
        assert_eq!(g.n_cells(), 100);
        assert_eq!(g.travel_time_s.side(), 100);
    }

    #[test]
    fn degenerate_bounds_rejected() {
        assert!(matches!(Bounds::new(30.0, 30.0, -97.0, -96.0), Err(GridError::DegenerateBounds(_))));
        let zero = Bounds { min_lat: 1.0, max_lat: 2.0, min_lon: 3.0, max_lon: 3.0 };
        let err = build_grid(zero, 2, 2, &SyntheticSpeed::new(10.0).unwrap()).unwrap_err();
        assert!(err.to_string().contains("zero-area"));
    }

    #[test]
    fn centers_map_to_themselves() {
        let g = unit_grid(4, 5);
        for (j, c) in g.cell_centers.iter().enumerate() {
            assert_eq!(g.assign_cell(c.lat, c.lon).unwrap(), j);
        }
    }

    #[test]
    fn shared_corner_goes_to_larger_indices() {
        let b = Bounds::new(0.0, 1.0, 0.0, 1.0).unwrap();
        let g = build_grid(b, 2, 2, &SyntheticSpeed::new(10.0).unwrap()).unwrap();
        assert_eq!(g.assign_cell(0.5, 0.5).unwrap(), g.cell_at(1, 1));
        // Awkward decimal bounds where the naive floor lands on the wrong side.
        let b = Bounds::new(30.1, 30.5, -97.9, -97.3).unwrap();
        let g = build_grid(b, 4, 6, &SyntheticSpeed::new(10.0).unwrap()).unwrap();
        for r in 1..4 {
            for c in 1..6 {
                let lat = edge(30.1, 30.5, 4, r);
                let lon = edge(-97.9, -97.3, 6, c);
                assert_eq!(g.assign_cell(lat, lon).unwrap(), g.cell_at(r, c));
            }
        }
        // Outer maximum corner belongs to the last cell.
        assert_eq!(g.assign_cell(30.5, -97.3).unwrap(), g.n_cells() - 1);
    }

    #[test]
    fn random_points_match_brute_force_rectangle() {
        use rand::{Rng, SeedableRng};
        let g = unit_grid(5, 7);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let b = g.bounds;
        for _ in 0..2000 {
            let lat = rng.random_range(b.min_lat..b.max_lat);
            let lon = rng.random_range(b.min_lon..b.max_lon);
            // Chebyshev distance in fractional (row, col) space to each center.
            let fr = (lat - b.min_lat) / g.cell_height_deg();
            let fc = (lon - b.min_lon) / g.cell_width_deg();
            let best = (0..g.n_cells())
                .min_by(|&a, &c| {
                    let d = |k: usize| {
                        let (r, cc) = g.row_col(k);
                        (fr - (r as f64 + 0.5)).abs().max((fc - (cc as f64 + 0.5)).abs())
                    };
                    d(a).partial_cmp(&d(c)).unwrap()
                })
                .unwrap();
            assert_eq!(g.assign_cell(lat, lon).unwrap(), best);
        }
    }

    #[test]
    fn out_of_bounds_and_snapping() {
        let g = unit_grid(3, 3);
        let b = g.bounds;
        assert!(matches!(g.assign_cell(b.max_lat + 0.001, b.min_lon), Err(GridError::OutOfBounds { .. })));
        assert_eq!(g.assign_cell_snapped(b.max_lat + 0.005, b.min_lon, 1.0).unwrap(), g.cell_at(2, 0));
        assert!(g.assign_cell_snapped(b.max_lat + 0.02, b.min_lon, 1.0).is_err());
    }

    #[test]
    fn synthetic_travel_time_basics() {
        let a = LatLon::new(30.3, -97.7);
        assert_eq!(synthetic_travel_time(a, a, 50.0).unwrap(), 0.0);
        let one_km_north = LatLon::new(30.3 + (1.0 / EARTH_RADIUS_KM).to_degrees(), -97.7);
        let t = synthetic_travel_time(a, one_km_north, 60.0).unwrap();
        assert!((t - 60.0).abs() < 1e-9, "{t}");
        assert!(synthetic_travel_time(a, one_km_north, 0.0).is_err());
        assert!(SyntheticSpeed::new(-3.0).is_err());
    }

    #[test]
    fn synthetic_matches_second_oracle_on_random_pairs() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for _ in 0..500 {
            let a = (rng.random_range(-60.0..60.0), rng.random_range(-180.0..180.0));
            let b = (rng.random_range(-60.0..60.0), rng.random_range(-180.0..180.0));
            let expect = oracle_haversine_km(a, b) / 35.0 * 3600.0;
            let got = synthetic_travel_time(LatLon::new(a.0, a.1), LatLon::new(b.0, b.1), 35.0).unwrap();
            assert!((got - expect).abs() <= 1e-6 * expect.max(1e-12), "{got} {expect}");
        }
    }

    #[test]
    fn travel_matrix_parsing() {
        let m = TravelMatrix::parse_csv("0\n").unwrap();
        assert_eq!(m.side(), 1);
        assert_eq!(m.get(0, 0), 0.0);
        let err = TravelMatrix::parse_csv("0,5\n-1,0\n").unwrap_err();
        match err {
            GridError::MatrixEntry { row, col, .. } => assert_eq!((row, col), (1, 0)),
            other => panic!("unexpected {other}"),
        }
        assert!(TravelMatrix::parse_csv("0,1\n1,0,3\n").is_err());
        assert!(TravelMatrix::parse_csv("0,x\n1,0\n").is_err());
    }

    #[test]
    fn travel_matrix_round_trip_file() {
        let g = unit_grid(3, 4);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("tt.csv");
        save_travel_matrix(&g.travel_time_s, &p).unwrap();
        assert_eq!(load_travel_matrix(&p).unwrap(), g.travel_time_s);
    }

    #[test]
    fn grid_document_round_trip() {
        let g = unit_grid(2, 3).with_stations(vec![0, 4]).unwrap().with_hospitals(vec![5]).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("grid.json");
        save_grid(&g, &p, "travel_times.csv").unwrap();
        let back = load_grid(&p).unwrap();
        assert_eq!(back.travel_time_s, g.travel_time_s);
        assert_eq!(back.station_cells, vec![0, 4]);
        assert_eq!(back.hospital_cells, vec![5]);
        assert_eq!(back.cell_centers, g.cell_centers);
    }

    #[test]
    fn bad_station_index_rejected() {
        let g = unit_grid(2, 2);
        assert!(matches!(g.with_stations(vec![4]), Err(GridError::BadCellIndex { .. })));
    }

    #[test]
    fn adjacency_lattice_structure() {
        let g = unit_grid(1, 1);
        assert!(derive_adjacency(&g).get(0, 0));
        let g = unit_grid(3, 3);
        let adj = derive_adjacency(&g);
        assert_eq!(adj.neighbors(4).len(), 9);
        assert_eq!(adj.neighbors(0), vec![0, 1, 3, 4]);
        for a in 0..9 {
            for b in 0..9 {
                assert_eq!(adj.get(a, b), adj.get(b, a));
            }
        }
    }

    #[test]
    fn adjacency_matches_center_distance_brute_force() {
        for rows in 1..=5 {
            for cols in 1..=5 {
                let g = unit_grid(rows, cols);
                let adj = derive_adjacency(&g);
                let (h, w) = (g.cell_height_deg(), g.cell_width_deg());
                for a in 0..g.n_cells() {
                    for b in 0..g.n_cells() {
                        let ca = g.cell_centers[a];
                        let cb = g.cell_centers[b];
                        let near = (ca.lat - cb.lat).abs() <= 1.5 * h && (ca.lon - cb.lon).abs() <= 1.5 * w;
                        assert_eq!(adj.get(a, b), near, "{rows}x{cols} {a},{b}");
                    }
                }
            }
        }
    }

    #[test]
    fn coverage_thresholds() {
        let g = unit_grid(1, 1).with_stations(vec![0]).unwrap();
        let cov = derive_coverage(&g, DEFAULT_COVERAGE_THRESHOLD_S);
        assert!(cov.get(0, 0));
        let g = unit_grid(3, 3).with_stations(vec![0, 4, 8]).unwrap();
        let cov = derive_coverage(&g, 0.0);
        for i in 0..3 {
            for j in 0..9 {
                assert_eq!(cov.get(i, j), j == g.station_cells[i]);
            }
        }
    }

    #[test]
    fn coverage_monotone_in_threshold() {
        let g = unit_grid(4, 4).with_stations(vec![0, 5, 15]).unwrap();
        let thresholds = [0.0, 30.0, 60.0, 90.0, 150.0, 600.0];
        for w in thresholds.windows(2) {
            let lo = derive_coverage(&g, w[0]);
            let hi = derive_coverage(&g, w[1]);
            for i in 0..3 {
                for j in 0..16 {
                    assert!(!lo.get(i, j) || hi.get(i, j));
                }
            }
        }
    }
}
