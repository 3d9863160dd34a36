//! Synthetic cities for demos and end-to-end tests: a grid with stations,
//! a weekday peak-hour call log with reported travel times, and tract
//! covariate tables.

use std::collections::BTreeMap;
use std::io::Write;

use chrono::{Datelike, Duration, NaiveDate, NaiveDateTime, TimeZone, Weekday};
use chrono_tz::Tz;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analysis::SVI_COLUMNS;
use crate::geogrid::{build_grid, haversine_km, Bounds, Grid, GridError, SyntheticSpeed};
use crate::ingest::{CallRecord, PeakWindow};
use crate::stats::substream_seed;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error("invalid synthetic city: {0}")]
    Invalid(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub bounds: Bounds,
    pub rows: usize,
    pub cols: usize,
    pub speed_kmh: f64,
    pub station_cells: Vec<usize>,
    pub hospital_cells: Vec<usize>,
    /// Cells around which call intensity is concentrated.
    pub hotspot_cells: Vec<usize>,
    /// Spatial spread of each hotspot, km.
    pub hotspot_scale_km: f64,
    /// Intensity floor relative to a hotspot peak.
    pub background: f64,
    pub n_calls: usize,
    /// Mean arrivals per peak hour.
    pub calls_per_hour: f64,
    pub start_date: NaiveDate,
    pub time_zone: String,
    /// Reported travel is `exp(a + b ln(grid) + N(0, noise^2))`.
    pub travel_a: f64,
    pub travel_b: f64,
    pub travel_noise: f64,
    /// Cells per tract side.
    pub tract_block: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            bounds: Bounds { min_lat: 30.10, max_lat: 30.40, min_lon: -97.90, max_lon: -97.55 },
            rows: 6,
            cols: 6,
            speed_kmh: 40.0,
            station_cells: vec![7, 10, 25, 28],
            hospital_cells: vec![14, 21],
            hotspot_cells: vec![8, 26],
            hotspot_scale_km: 5.0,
            background: 0.1,
            n_calls: 2000,
            calls_per_hour: 2.0,
            start_date: NaiveDate::from_ymd_opt(2021, 1, 4).expect("valid date"),
            time_zone: "America/Chicago".into(),
            travel_a: 0.6,
            travel_b: 0.9,
            travel_noise: 0.25,
            tract_block: 2,
            seed: 7,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticCity {
    pub grid: Grid,
    pub calls: Vec<CallRecord>,
    /// Relative call intensity per cell (sums to 1).
    pub intensity: Vec<f64>,
    pub tract_map: BTreeMap<usize, String>,
    pub svi: BTreeMap<String, Vec<f64>>,
}

pub fn cell_intensity(grid: &Grid, hotspots: &[usize], scale_km: f64, background: f64) -> Vec<f64> {
    let raw: Vec<f64> = grid
        .cell_centers
        .iter()
        .map(|&c| {
            background
                + hotspots
                    .iter()
                    .map(|&h| {
                        let d = haversine_km(c, grid.cell_centers[h]);
                        (-(d * d) / (2.0 * scale_km * scale_km)).exp()
                    })
                    .sum::<f64>()
        })
        .collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|w| w / total).collect()
}

fn pick(weights: &[f64], u: f64) -> usize {
    let mut acc = 0.0;
    for (i, w) in weights.iter().enumerate() {
        acc += w;
        if u < acc {
            return i;
        }
    }
    weights.len() - 1
}

/// Arrival times inside the weekday peak window, as local naive times.
fn peak_arrivals(cfg: &SynthConfig, rng: &mut ChaCha8Rng) -> Result<Vec<NaiveDateTime>, SynthError> {
    let window = PeakWindow::default();
    let gap = Exp::new(cfg.calls_per_hour / 3600.0).map_err(|e| SynthError::Invalid(e.to_string()))?;
    let mut out = Vec::with_capacity(cfg.n_calls);
    let mut day = cfg.start_date;
    let mut offset_s = 0.0;
    let span_s = f64::from(window.end_hour - window.start_hour) * 3600.0;
    while out.len() < cfg.n_calls {
        if !window.weekdays.contains(&day.weekday()) {
            day = day.succ_opt().expect("date in range");
            continue;
        }
        offset_s += gap.sample(rng);
        if offset_s >= span_s {
            // Memoryless: carry the overshoot into the next peak window.
            offset_s -= span_s;
            day = day.succ_opt().expect("date in range");
            while matches!(day.weekday(), Weekday::Sat | Weekday::Sun) {
                day = day.succ_opt().expect("date in range");
            }
            continue;
        }
        let start = day.and_hms_opt(window.start_hour, 0, 0).expect("valid hour");
        out.push(start + Duration::milliseconds((offset_s * 1000.0).round() as i64));
    }
    Ok(out)
}

pub fn generate_city(cfg: &SynthConfig) -> Result<SyntheticCity, SynthError> {
    if cfg.station_cells.is_empty() {
        return Err(SynthError::Invalid("no stations".into()));
    }
    if !(cfg.calls_per_hour > 0.0) || cfg.tract_block == 0 {
        return Err(SynthError::Invalid("calls_per_hour and tract_block must be positive".into()));
    }
    let zone: Tz = cfg.time_zone.parse().map_err(|_| SynthError::Invalid(format!("unknown zone {}", cfg.time_zone)))?;
    let grid = build_grid(cfg.bounds, cfg.rows, cfg.cols, &SyntheticSpeed::new(cfg.speed_kmh)?)?
        .with_stations(cfg.station_cells.clone())?
        .with_hospitals(cfg.hospital_cells.clone())?;
    if let Some(&h) = cfg.hotspot_cells.iter().find(|&&h| h >= grid.n_cells()) {
        return Err(SynthError::Invalid(format!("hotspot cell {h} outside grid")));
    }
    let intensity = cell_intensity(&grid, &cfg.hotspot_cells, cfg.hotspot_scale_km, cfg.background);

    let mut time_rng = ChaCha8Rng::seed_from_u64(substream_seed(cfg.seed, "arrivals", 0));
    let mut rng = ChaCha8Rng::seed_from_u64(substream_seed(cfg.seed, "calls", 0));
    let noise = Normal::new(0.0, cfg.travel_noise.max(0.0)).map_err(|e| SynthError::Invalid(e.to_string()))?;
    let (h, w) = (grid.cell_height_deg(), grid.cell_width_deg());
    let mut calls = Vec::with_capacity(cfg.n_calls);
    for t in peak_arrivals(cfg, &mut time_rng)? {
        let cell = pick(&intensity, rng.random::<f64>());
        let (r, c) = grid.row_col(cell);
        let lat = cfg.bounds.min_lat + (r as f64 + rng.random_range(0.05..0.95)) * h;
        let lon = cfg.bounds.min_lon + (c as f64 + rng.random_range(0.05..0.95)) * w;
        let station = grid
            .station_cells
            .iter()
            .copied()
            .min_by(|&a, &b| grid.travel(a, cell).total_cmp(&grid.travel(b, cell)).then(a.cmp(&b)))
            .expect("stations present");
        // Same-cell trips still take some time on the road.
        let g = grid.travel(station, cell).max(60.0);
        let travel = (cfg.travel_a + cfg.travel_b * g.ln() + noise.sample(&mut rng)).exp();
        let local = zone.from_local_datetime(&t).earliest().unwrap_or_else(|| zone.from_utc_datetime(&t));
        let mut rec = CallRecord::new(local.fixed_offset(), lat, lon);
        let origin = grid.cell_centers[station];
        rec.ambulance_lat = Some(origin.lat);
        rec.ambulance_lon = Some(origin.lon);
        rec.reported_travel_s = Some(round_ms(travel));
        rec.reported_response_s = Some(round_ms(travel + rng.random_range(0.0..60.0)));
        calls.push(rec);
    }

    let mut tract_map = BTreeMap::new();
    let mut svi = BTreeMap::new();
    let mut svi_rng = ChaCha8Rng::seed_from_u64(substream_seed(cfg.seed, "svi", 0));
    for cell in 0..grid.n_cells() {
        let (r, c) = grid.row_col(cell);
        let id = format!("T{:02}{:02}", r / cfg.tract_block, c / cfg.tract_block);
        if !svi.contains_key(&id) {
            let row: Vec<f64> = (0..SVI_COLUMNS.len()).map(|_| svi_rng.random_range(0.0..5000.0_f64).round()).collect();
            svi.insert(id.clone(), row);
        }
        tract_map.insert(cell, id);
    }
    Ok(SyntheticCity { grid, calls, intensity, tract_map, svi })
}

fn round_ms(x: f64) -> f64 {
    (x * 1000.0).round() / 1000.0
}

pub fn write_tract_map<W: Write>(mut w: W, map: &BTreeMap<usize, String>) -> std::io::Result<()> {
    writeln!(w, "cell_index,tract_id")?;
    for (cell, id) in map {
        writeln!(w, "{cell},{id}")?;
    }
    Ok(())
}

pub fn write_svi<W: Write>(mut w: W, svi: &BTreeMap<String, Vec<f64>>) -> std::io::Result<()> {
    write!(w, "tract_id")?;
    for c in SVI_COLUMNS {
        write!(w, ",{c}")?;
    }
    writeln!(w)?;
    for (id, row) in svi {
        write!(w, "{id}")?;
        for v in row {
            write!(w, ",{v}")?;
        }
        writeln!(w)?;
    }
    Ok(())
}
