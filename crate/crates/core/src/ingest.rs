//! Call-log parsing, peak-hour filtering, train/test splitting and the
//! period x region demand counts fed to the optimizers.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use chrono::{DateTime, Datelike, Duration, FixedOffset, LocalResult, NaiveDateTime, TimeZone, Timelike, Weekday};
use chrono_tz::Tz;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geogrid::Grid;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("call file is missing mandatory columns: {}", .0.join(", "))]
    MissingColumns(Vec<String>),
    #[error("unknown time zone {0:?}")]
    UnknownZone(String),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("need at least 2 calls to split, got {0}")]
    TooFewCalls(usize),
    #[error("invalid split: {0}")]
    BadSplit(String),
    #[error("period length must be positive, got {0}")]
    BadPeriod(i64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CallRecord {
    pub timestamp: DateTime<FixedOffset>,
    pub lat: f64,
    pub lon: f64,
    pub reported_response_s: Option<f64>,
    pub reported_travel_s: Option<f64>,
    pub ambulance_lat: Option<f64>,
    pub ambulance_lon: Option<f64>,
    pub on_scene_s: Option<f64>,
    pub to_hospital_s: Option<f64>,
}

impl CallRecord {
    pub fn new(timestamp: DateTime<FixedOffset>, lat: f64, lon: f64) -> Self {
        Self {
            timestamp,
            lat,
            lon,
            reported_response_s: None,
            reported_travel_s: None,
            ambulance_lat: None,
            ambulance_lon: None,
            on_scene_s: None,
            to_hospital_s: None,
        }
    }
}

/// Column names in the input CSV plus the zone used for timestamps that
/// carry no explicit offset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CallSchema {
    pub datetime: String,
    pub latitude: String,
    pub longitude: String,
    pub response_time_s: String,
    pub travel_time_s: String,
    pub amb_latitude: String,
    pub amb_longitude: String,
    pub on_scene_s: String,
    pub to_hospital_s: String,
    pub time_zone: String,
}

impl Default for CallSchema {
    fn default() -> Self {
        Self {
            datetime: "datetime".into(),
            latitude: "latitude".into(),
            longitude: "longitude".into(),
            response_time_s: "response_time_s".into(),
            travel_time_s: "travel_time_s".into(),
            amb_latitude: "amb_latitude".into(),
            amb_longitude: "amb_longitude".into(),
            on_scene_s: "on_scene_s".into(),
            to_hospital_s: "to_hospital_s".into(),
            time_zone: "America/Chicago".into(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParsedCalls {
    pub calls: Vec<CallRecord>,
    pub dropped: usize,
    /// Line number (1-based, header = 1) and reason for every dropped row.
    pub drop_reasons: Vec<(usize, String)>,
}

/// Parses a timestamp; explicit offsets win, naive values are placed in
/// `zone`, ambiguous or skipped local times take the earlier offset.
pub fn parse_timestamp(text: &str, zone: Tz) -> Option<DateTime<FixedOffset>> {
    let text = text.trim();
    if let Ok(t) = DateTime::parse_from_rfc3339(text) {
        return Some(t);
    }
    for fmt in ["%Y-%m-%d %H:%M:%S%:z", "%Y-%m-%dT%H:%M:%S%.f%z"] {
        if let Ok(t) = DateTime::parse_from_str(text, fmt) {
            return Some(t);
        }
    }
    const NAIVE: [&str; 6] = [
        "%Y-%m-%dT%H:%M:%S%.f",
        "%Y-%m-%d %H:%M:%S%.f",
        "%Y-%m-%dT%H:%M",
        "%Y-%m-%d %H:%M",
        "%m/%d/%Y %H:%M:%S",
        "%m/%d/%Y %I:%M:%S %p",
    ];
    let naive = NAIVE.iter().find_map(|f| NaiveDateTime::parse_from_str(text, f).ok())?;
    localize(naive, zone)
}

fn localize(naive: NaiveDateTime, zone: Tz) -> Option<DateTime<FixedOffset>> {
    match zone.from_local_datetime(&naive) {
        LocalResult::Single(t) => Some(t.fixed_offset()),
        LocalResult::Ambiguous(a, b) => {
            let (a, b) = (a.fixed_offset(), b.fixed_offset());
            // Earlier offset = the one in force before the transition.
            Some(if a.offset().local_minus_utc() >= b.offset().local_minus_utc() { a } else { b })
        }
        LocalResult::None => {
            // Spring-forward gap: keep the pre-transition offset.
            let before = zone.from_local_datetime(&(naive - Duration::hours(3))).earliest()?;
            let off = before.fixed_offset().offset().to_owned();
            off.from_local_datetime(&naive).single()
        }
    }
}

fn parse_opt(field: Option<&str>) -> Result<Option<f64>, String> {
    match field.map(str::trim) {
        None | Some("") => Ok(None),
        Some(s) => s.parse::<f64>().map(Some).map_err(|_| format!("not a number: {s:?}")),
    }
}

pub fn parse_calls_from_reader<R: Read>(reader: R, schema: &CallSchema) -> Result<ParsedCalls, IngestError> {
    let zone: Tz = schema.time_zone.parse().map_err(|_| IngestError::UnknownZone(schema.time_zone.clone()))?;
    let mut rdr = csv::ReaderBuilder::new().flexible(true).trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let find = |name: &str| headers.iter().position(|h| h == name);
    let mandatory = [&schema.datetime, &schema.latitude, &schema.longitude];
    let missing: Vec<String> = mandatory.iter().filter(|n| find(n).is_none()).map(|n| n.to_string()).collect();
    if !missing.is_empty() {
        return Err(IngestError::MissingColumns(missing));
    }
    let (i_dt, i_lat, i_lon) =
        (find(&schema.datetime).unwrap(), find(&schema.latitude).unwrap(), find(&schema.longitude).unwrap());
    let optional = [
        find(&schema.response_time_s),
        find(&schema.travel_time_s),
        find(&schema.amb_latitude),
        find(&schema.amb_longitude),
        find(&schema.on_scene_s),
        find(&schema.to_hospital_s),
    ];

    let mut out = ParsedCalls::default();
    for (k, row) in rdr.records().enumerate() {
        let line = k + 2;
        let row = match row {
            Ok(r) => r,
            Err(e) => {
                out.dropped += 1;
                out.drop_reasons.push((line, e.to_string()));
                continue;
            }
        };
        let parsed = (|| -> Result<CallRecord, String> {
            let ts_text = row.get(i_dt).ok_or("missing datetime")?;
            let timestamp =
                parse_timestamp(ts_text, zone).ok_or_else(|| format!("unparseable timestamp {ts_text:?}"))?;
            let lat = parse_opt(row.get(i_lat))?.ok_or("missing latitude")?;
            let lon = parse_opt(row.get(i_lon))?.ok_or("missing longitude")?;
            if !(-90.0..=90.0).contains(&lat) || !(-180.0..=180.0).contains(&lon) {
                return Err(format!("coordinates out of range ({lat}, {lon})"));
            }
            let opt = |idx: Option<usize>| -> Result<Option<f64>, String> {
                match idx {
                    Some(i) => parse_opt(row.get(i)),
                    None => Ok(None),
                }
            };
            let nonneg = |v: Option<f64>, what: &str| -> Result<Option<f64>, String> {
                match v {
                    Some(x) if !(x >= 0.0) => Err(format!("{what} must be nonnegative, got {x}")),
                    other => Ok(other),
                }
            };
            Ok(CallRecord {
                timestamp,
                lat,
                lon,
                reported_response_s: nonneg(opt(optional[0])?, "response time")?,
                reported_travel_s: nonneg(opt(optional[1])?, "travel time")?,
                ambulance_lat: opt(optional[2])?,
                ambulance_lon: opt(optional[3])?,
                on_scene_s: nonneg(opt(optional[4])?, "on-scene time")?,
                to_hospital_s: nonneg(opt(optional[5])?, "hospital time")?,
            })
        })();
        match parsed {
            Ok(c) => out.calls.push(c),
            Err(reason) => {
                out.dropped += 1;
                out.drop_reasons.push((line, reason));
            }
        }
    }
    out.calls.sort_by_key(|c| c.timestamp);
    if out.dropped > 0 {
        log::warn!("dropped {} malformed call rows", out.dropped);
    }
    Ok(out)
}

pub fn parse_calls(path: &Path, schema: &CallSchema) -> Result<ParsedCalls, IngestError> {
    let f = std::fs::File::open(path)?;
    parse_calls_from_reader(f, schema)
}

/// Writes calls using the schema's column names; timestamps as RFC 3339.
pub fn write_calls<W: Write>(writer: W, calls: &[CallRecord], schema: &CallSchema) -> Result<(), IngestError> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record([
        &schema.datetime,
        &schema.latitude,
        &schema.longitude,
        &schema.response_time_s,
        &schema.travel_time_s,
        &schema.amb_latitude,
        &schema.amb_longitude,
        &schema.on_scene_s,
        &schema.to_hospital_s,
    ])?;
    let f = |v: Option<f64>| v.map(|x| format!("{x:?}")).unwrap_or_default();
    for c in calls {
        w.write_record([
            c.timestamp.to_rfc3339(),
            format!("{:?}", c.lat),
            format!("{:?}", c.lon),
            f(c.reported_response_s),
            f(c.reported_travel_s),
            f(c.ambulance_lat),
            f(c.ambulance_lon),
            f(c.on_scene_s),
            f(c.to_hospital_s),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Weekday/hour window in the call's own local time, `[start, end)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeakWindow {
    pub start_hour: u32,
    pub end_hour: u32,
    pub weekdays: Vec<Weekday>,
}

impl Default for PeakWindow {
    fn default() -> Self {
        Self {
            start_hour: 8,
            end_hour: 20,
            weekdays: vec![Weekday::Mon, Weekday::Tue, Weekday::Wed, Weekday::Thu, Weekday::Fri],
        }
    }
}

impl PeakWindow {
    pub fn contains(&self, t: &DateTime<FixedOffset>) -> bool {
        self.weekdays.contains(&t.weekday()) && t.hour() >= self.start_hour && t.hour() < self.end_hour
    }
}

pub fn filter_peak(calls: &[CallRecord], window: &PeakWindow) -> Vec<CallRecord> {
    calls.iter().filter(|c| window.contains(&c.timestamp)).cloned().collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct DemandMatrix {
    /// `counts[period][region]`.
    pub counts: Vec<Vec<u32>>,
    pub period_length_s: i64,
    pub period_start_times: Vec<DateTime<FixedOffset>>,
    /// Calls farther than the snap tolerance from the grid.
    pub dropped_calls: usize,
}

impl DemandMatrix {
    pub fn n_periods(&self) -> usize {
        self.counts.len()
    }

    pub fn n_regions(&self) -> usize {
        self.counts.first().map_or(0, Vec::len)
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().map(|&c| c as u64).sum()
    }

    /// One row per period, first column the ISO-8601 period start.
    pub fn to_csv_string(&self) -> String {
        let mut s = String::from("period_start");
        for j in 0..self.n_regions() {
            s.push_str(&format!(",r{j}"));
        }
        s.push('\n');
        for (t, row) in self.period_start_times.iter().zip(&self.counts) {
            s.push_str(&t.to_rfc3339());
            for c in row {
                s.push_str(&format!(",{c}"));
            }
            s.push('\n');
        }
        s
    }

    pub fn parse_csv(text: &str, period_length_s: i64) -> Result<Self, IngestError> {
        let mut rdr = csv::ReaderBuilder::new().from_reader(text.as_bytes());
        let mut counts = Vec::new();
        let mut starts = Vec::new();
        for rec in rdr.records() {
            let rec = rec?;
            let t = DateTime::parse_from_rfc3339(rec.get(0).unwrap_or_default())
                .map_err(|e| IngestError::BadSplit(format!("bad period start: {e}")))?;
            let row = rec
                .iter()
                .skip(1)
                .map(|v| v.parse::<u32>().map_err(|e| IngestError::BadSplit(format!("bad count {v:?}: {e}"))))
                .collect::<Result<Vec<_>, _>>()?;
            starts.push(t);
            counts.push(row);
        }
        Ok(Self { counts, period_length_s, period_start_times: starts, dropped_calls: 0 })
    }
}

/// Default snapping distance for calls just outside the grid, in cell widths.
pub const SNAP_CELLS: f64 = 1.0;

/// Groups calls into contiguous periods of `period_length_s` seconds
/// (aligned to the local clock of the first call) and counts them per
/// region. When `window` is given, periods whose start falls outside it are
/// omitted so off-peak gaps do not dilute rates.
pub fn build_demand_matrix(
    calls: &[CallRecord],
    grid: &Grid,
    period_length_s: i64,
    window: Option<&PeakWindow>,
) -> Result<DemandMatrix, IngestError> {
    if period_length_s <= 0 {
        return Err(IngestError::BadPeriod(period_length_s));
    }
    let n = grid.n_cells();
    let mut placed: Vec<(i64, usize)> = Vec::with_capacity(calls.len());
    let mut dropped = 0;
    let offset = calls.first().map_or(FixedOffset::east_opt(0).unwrap(), |c| *c.timestamp.offset());
    for c in calls {
        match grid.assign_cell_snapped(c.lat, c.lon, SNAP_CELLS) {
            Ok(cell) => {
                let local = c.timestamp.timestamp() + offset.local_minus_utc() as i64;
                placed.push((local.div_euclid(period_length_s), cell));
            }
            Err(_) => dropped += 1,
        }
    }
    if placed.is_empty() {
        return Ok(DemandMatrix {
            counts: Vec::new(),
            period_length_s,
            period_start_times: Vec::new(),
            dropped_calls: dropped,
        });
    }
    let first = placed.iter().map(|p| p.0).min().unwrap();
    let last = placed.iter().map(|p| p.0).max().unwrap();
    let mut rows: BTreeMap<i64, Vec<u32>> = BTreeMap::new();
    for p in first..=last {
        let start = period_start(p, period_length_s, offset);
        if window.is_none_or(|w| w.contains(&start)) {
            rows.insert(p, vec![0; n]);
        }
    }
    for (p, cell) in placed {
        match rows.get_mut(&p) {
            Some(row) => row[cell] += 1,
            None => dropped += 1,
        }
    }
    let period_start_times = rows.keys().map(|&p| period_start(p, period_length_s, offset)).collect();
    Ok(DemandMatrix {
        counts: rows.into_values().collect(),
        period_length_s,
        period_start_times,
        dropped_calls: dropped,
    })
}

fn period_start(p: i64, len: i64, offset: FixedOffset) -> DateTime<FixedOffset> {
    let utc = p * len - offset.local_minus_utc() as i64;
    DateTime::from_timestamp(utc, 0).expect("period start in range").with_timezone(&offset)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum SplitMode {
    /// Earliest `fraction` of calls go to training.
    Chronological { fraction: f64 },
    /// Seeded shuffle into `k` folds; fold `fold_index` is the test set.
    KFold { k: usize, fold_index: usize, seed: u64 },
}

/// Seeded partition of `0..n` into `k` nearly equal folds. Each fold is
/// returned in ascending index order.
pub fn kfold_partition(n: usize, k: usize, seed: u64) -> Vec<Vec<usize>> {
    let mut idx: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    idx.shuffle(&mut rng);
    let mut folds = Vec::with_capacity(k);
    let (base, extra) = (n / k, n % k);
    let mut start = 0;
    for f in 0..k {
        let len = base + usize::from(f < extra);
        let mut fold = idx[start..start + len].to_vec();
        fold.sort_unstable();
        folds.push(fold);
        start += len;
    }
    folds
}

pub fn split_train_test<T: Clone>(items: &[T], mode: SplitMode) -> Result<(Vec<T>, Vec<T>), IngestError> {
    let n = items.len();
    if n < 2 {
        return Err(IngestError::TooFewCalls(n));
    }
    match mode {
        SplitMode::Chronological { fraction } => {
            if !(fraction > 0.0 && fraction < 1.0) {
                return Err(IngestError::BadSplit(format!("fraction must be in (0,1), got {fraction}")));
            }
            let cut = ((fraction * n as f64).round() as usize).clamp(1, n - 1);
            Ok((items[..cut].to_vec(), items[cut..].to_vec()))
        }
        SplitMode::KFold { k, fold_index, seed } => {
            if k < 2 || k > n || fold_index >= k {
                return Err(IngestError::BadSplit(format!("k = {k}, fold {fold_index} invalid for {n} items")));
            }
            let folds = kfold_partition(n, k, seed);
            let mut in_test = vec![false; n];
            for &i in &folds[fold_index] {
                in_test[i] = true;
            }
            let train = items.iter().zip(&in_test).filter(|(_, &t)| !t).map(|(c, _)| c.clone()).collect();
            let test = items.iter().zip(&in_test).filter(|(_, &t)| t).map(|(c, _)| c.clone()).collect();
            Ok((train, test))
        }
    }
}

/// Drops pairs whose reported value sits in the bottom or top `p` tail.
///
/// With `k = floor(p n)` and reported values sorted ascending, the
/// nearest-rank cutoffs are the `k`-th smallest and `k`-th largest values;
/// pairs at or beyond either cutoff are removed (ties go with them).
pub fn trim_quantiles(pairs: &[(f64, f64)], p: f64) -> Vec<(f64, f64)> {
    let n = pairs.len();
    let k = ((p.max(0.0) * n as f64) + 1e-9).floor() as usize;
    if k == 0 || n == 0 {
        return pairs.to_vec();
    }
    let mut sorted: Vec<f64> = pairs.iter().map(|p| p.1).collect();
    sorted.sort_by(f64::total_cmp);
    let k = k.min(n);
    let lo = sorted[k - 1];
    let hi = sorted[n - k];
    pairs.iter().copied().filter(|&(_, r)| r > lo && r < hi).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geogrid::{build_grid, Bounds, SyntheticSpeed};

    fn ts(s: &str) -> DateTime<FixedOffset> {
        DateTime::parse_from_rfc3339(s).unwrap()
    }

    fn grid() -> Grid {
        let b = Bounds::new(30.0, 30.3, -97.9, -97.6).unwrap();
        build_grid(b, 3, 3, &SyntheticSpeed::new(40.0).unwrap()).unwrap()
    }

    const HEADER: &str = "datetime,latitude,longitude,response_time_s,travel_time_s,amb_latitude,amb_longitude,on_scene_s,to_hospital_s\n";

    #[test]
    fn empty_file_with_header() {
        let p = parse_calls_from_reader(HEADER.as_bytes(), &CallSchema::default()).unwrap();
        assert!(p.calls.is_empty());
        assert_eq!(p.dropped, 0);
    }

    #[test]
    fn bad_timestamp_is_counted() {
        let text = format!("{HEADER}not-a-date,30.1,-97.7,,,,,,\n2020-01-06T09:00:00-06:00,30.1,-97.7,300,240,,,,\n");
        let p = parse_calls_from_reader(text.as_bytes(), &CallSchema::default()).unwrap();
        assert_eq!(p.calls.len(), 1);
        assert_eq!(p.dropped, 1);
        assert_eq!(p.drop_reasons[0].0, 2);
        assert_eq!(p.calls[0].reported_travel_s, Some(240.0));
    }

    #[test]
    fn rows_sorted_by_time() {
        let text = "datetime,latitude,longitude\n2020-01-06 10:00:00,30.1,-97.7\n2020-01-06 08:00:00,30.1,-97.7\n2020-01-06 09:00:00,30.1,-97.7\n";
        let p = parse_calls_from_reader(text.as_bytes(), &CallSchema::default()).unwrap();
        let hours: Vec<u32> = p.calls.iter().map(|c| c.timestamp.hour()).collect();
        assert_eq!(hours, vec![8, 9, 10]);
        assert_eq!(p.calls[0].timestamp.offset().local_minus_utc(), -6 * 3600);
    }

    #[test]
    fn missing_columns_listed() {
        let err = parse_calls_from_reader("when,latitude\n".as_bytes(), &CallSchema::default()).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("datetime") && msg.contains("longitude"), "{msg}");
    }

    #[test]
    fn custom_column_names() {
        let schema =
            CallSchema { datetime: "when".into(), latitude: "y".into(), longitude: "x".into(), ..Default::default() };
        let p = parse_calls_from_reader("when,y,x\n2020-01-06T09:00:00Z,30.1,-97.7\n".as_bytes(), &schema).unwrap();
        assert_eq!(p.calls.len(), 1);
    }

    #[test]
    fn dst_ambiguity_takes_earlier_offset() {
        let zone: Tz = "America/Chicago".parse().unwrap();
        // 2021-11-07 01:30 happens twice; CDT (-05:00) comes first.
        let t = parse_timestamp("2021-11-07 01:30:00", zone).unwrap();
        assert_eq!(t.offset().local_minus_utc(), -5 * 3600);
        // 2021-03-14 02:30 does not exist; keep CST (-06:00).
        let t = parse_timestamp("2021-03-14 02:30:00", zone).unwrap();
        assert_eq!(t.offset().local_minus_utc(), -6 * 3600);
        assert_eq!(t.hour(), 2);
    }

    #[test]
    fn peak_filter_rules() {
        let w = PeakWindow::default();
        // 2020-01-04 is a Saturday, 2020-01-06 a Monday.
        let sat = CallRecord::new(ts("2020-01-04T12:00:00-06:00"), 30.1, -97.7);
        let mon8 = CallRecord::new(ts("2020-01-06T08:00:00-06:00"), 30.1, -97.7);
        let mon20 = CallRecord::new(ts("2020-01-06T20:00:00-06:00"), 30.1, -97.7);
        let kept = filter_peak(&[sat, mon8.clone(), mon20], &w);
        assert_eq!(kept, vec![mon8.clone()]);
        let all_peak = vec![mon8.clone(), mon8];
        assert_eq!(filter_peak(&all_peak, &w), all_peak);
    }

    #[test]
    fn demand_matrix_counts() {
        let g = grid();
        let c = g.cell_centers[4];
        let one = vec![CallRecord::new(ts("2020-01-06T09:10:00-06:00"), c.lat, c.lon)];
        let m = build_demand_matrix(&one, &g, 3600, None).unwrap();
        assert_eq!(m.n_periods(), 1);
        assert_eq!(m.total(), 1);
        assert_eq!(m.counts[0][4], 1);
        assert_eq!(m.period_start_times[0], ts("2020-01-06T09:00:00-06:00"));

        let two = vec![one[0].clone(), CallRecord::new(ts("2020-01-06T09:50:00-06:00"), c.lat, c.lon)];
        let m = build_demand_matrix(&two, &g, 3600, None).unwrap();
        assert_eq!(
            m.counts,
            vec![{
                let mut r = vec![0; 9];
                r[4] = 2;
                r
            }]
        );
    }

    #[test]
    fn demand_matrix_periods_tile_the_span() {
        let g = grid();
        let c = g.cell_centers[0];
        let calls = vec![
            CallRecord::new(ts("2020-01-06T09:10:00-06:00"), c.lat, c.lon),
            CallRecord::new(ts("2020-01-06T12:10:00-06:00"), c.lat, c.lon),
        ];
        let m = build_demand_matrix(&calls, &g, 3600, None).unwrap();
        assert_eq!(m.n_periods(), 4);
        let totals: Vec<u32> = m.counts.iter().map(|r| r.iter().sum()).collect();
        assert_eq!(totals, vec![1, 0, 0, 1]);
    }

    #[test]
    fn demand_matrix_window_skips_overnight() {
        let g = grid();
        let c = g.cell_centers[0];
        let calls = vec![
            CallRecord::new(ts("2020-01-06T19:10:00-06:00"), c.lat, c.lon),
            CallRecord::new(ts("2020-01-07T08:10:00-06:00"), c.lat, c.lon),
        ];
        let m = build_demand_matrix(&calls, &g, 3600, Some(&PeakWindow::default())).unwrap();
        assert_eq!(m.n_periods(), 2);
        assert_eq!(m.total(), 2);
    }

    #[test]
    fn demand_matrix_matches_independent_recount() {
        use rand::{Rng, SeedableRng};
        let g = grid();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let base = ts("2020-01-06T00:00:00-06:00");
        let mut calls: Vec<CallRecord> = (0..400)
            .map(|_| {
                let t = base + Duration::seconds(rng.random_range(0..86_400 * 3));
                CallRecord::new(t, rng.random_range(30.0..30.3), rng.random_range(-97.9..-97.6))
            })
            .collect();
        calls.sort_by_key(|c| c.timestamp);
        let m = build_demand_matrix(&calls, &g, 1800, None).unwrap();
        assert_eq!(m.total(), 400);
        // Second pass: count calls per period start directly.
        for (p, start) in m.period_start_times.iter().enumerate() {
            let end = *start + Duration::seconds(1800);
            let direct = calls.iter().filter(|c| c.timestamp >= *start && c.timestamp < end).count() as u32;
            assert_eq!(m.counts[p].iter().sum::<u32>(), direct);
        }
    }

    #[test]
    fn far_calls_are_dropped_and_counted() {
        let g = grid();
        let calls = vec![
            CallRecord::new(ts("2020-01-06T09:10:00-06:00"), 35.0, -97.7),
            CallRecord::new(ts("2020-01-06T09:20:00-06:00"), 30.305, -97.7),
        ];
        let m = build_demand_matrix(&calls, &g, 3600, None).unwrap();
        assert_eq!(m.dropped_calls, 1);
        assert_eq!(m.total(), 1);
    }

    #[test]
    fn chronological_split() {
        let items: Vec<usize> = (0..10).collect();
        let (tr, te) = split_train_test(&items, SplitMode::Chronological { fraction: 0.8 }).unwrap();
        assert_eq!(tr, (0..8).collect::<Vec<_>>());
        assert_eq!(te, vec![8, 9]);
        assert!(split_train_test(&items[..1], SplitMode::Chronological { fraction: 0.5 }).is_err());
        assert!(split_train_test(&items, SplitMode::Chronological { fraction: 1.0 }).is_err());
    }

    #[test]
    fn kfold_tests_partition_and_are_seeded() {
        let items: Vec<usize> = (0..31).collect();
        let mut seen = [0; 31];
        for f in 0..3 {
            let (tr, te) = split_train_test(&items, SplitMode::KFold { k: 3, fold_index: f, seed: 9 }).unwrap();
            assert_eq!(tr.len() + te.len(), 31);
            for &i in &te {
                seen[i] += 1;
            }
            let again = split_train_test(&items, SplitMode::KFold { k: 3, fold_index: f, seed: 9 }).unwrap();
            assert_eq!(again.1, te);
        }
        assert!(seen.iter().all(|&c| c == 1));
    }

    #[test]
    fn trimming() {
        let pairs: Vec<(f64, f64)> = (1..=100).map(|v| (v as f64, v as f64)).collect();
        assert_eq!(trim_quantiles(&pairs, 0.0), pairs);
        let t = trim_quantiles(&pairs, 0.01);
        assert_eq!(t.len(), 98);
        assert!(t.iter().all(|p| p.1 > 1.0 && p.1 < 100.0));

        let mut with_zero: Vec<(f64, f64)> = (1..=199).map(|v| (v as f64, 60.0 + v as f64)).collect();
        with_zero.push((30.0, 0.0));
        let t = trim_quantiles(&with_zero, 0.01);
        assert!(t.iter().all(|p| p.1 != 0.0));
    }
}
