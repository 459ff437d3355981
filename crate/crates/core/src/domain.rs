//! Visibility scale, stations, forecast cases and CSV ingestion.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use chrono::{DateTime, Duration, NaiveDate, NaiveDateTime, SecondsFormat, Utc};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Number of WMO visibility reporting categories.
pub const N_CATEGORIES: usize = 84;
/// Upper end of the reporting scale in meters.
pub const MAX_VISIBILITY_M: f64 = 70_000.0;
/// Raw ensemble size: one control plus fifty exchangeable members.
pub const DEFAULT_ENSEMBLE_SIZE: usize = 51;
const EARTH_RADIUS_KM: f64 = 6371.0;

/// The ordered WMO visibility reporting values in meters.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VisibilityScale {
    categories: Vec<u32>,
}

/// The canonical 84-value scale: 0..5000 by 100, 6000..30000 by 1000,
/// 35000..70000 by 5000.
pub fn build_scale() -> VisibilityScale {
    let categories: Vec<u32> = (0..=5000)
        .step_by(100)
        .chain((6000..=30_000).step_by(1000))
        .chain((35_000..=70_000).step_by(5000))
        .collect();
    debug_assert_eq!(categories.len(), N_CATEGORIES);
    VisibilityScale { categories }
}

impl Default for VisibilityScale {
    fn default() -> Self {
        build_scale()
    }
}

impl VisibilityScale {
    pub fn len(&self) -> usize {
        self.categories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.categories.is_empty()
    }

    /// Meter value of category `k`.
    pub fn value(&self, k: usize) -> f64 {
        f64::from(self.categories[k])
    }

    pub fn values(&self) -> impl ExactSizeIterator<Item = f64> + '_ {
        self.categories.iter().map(|&v| f64::from(v))
    }

    /// Largest category whose value does not exceed `value` (rounding down).
    /// Values beyond the top of the scale map to the last category.
    pub fn discretize(&self, value: f64) -> Result<usize> {
        if !value.is_finite() || value < 0.0 {
            return Err(Error::invalid(format!(
                "visibility must be finite and nonnegative, got {value}"
            )));
        }
        Ok(self
            .categories
            .partition_point(|&c| f64::from(c) <= value)
            .saturating_sub(1))
    }

    /// Meter value of `value` rounded down onto the scale.
    pub fn round_down(&self, value: f64) -> Result<f64> {
        self.discretize(value).map(|k| self.value(k))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Station {
    pub id: String,
    pub latitude: f64,
    pub longitude: f64,
}

impl Station {
    pub fn new(id: impl Into<String>, latitude: f64, longitude: f64) -> Result<Self> {
        let id = id.into();
        if id.is_empty() {
            return Err(Error::invalid("station id must not be empty"));
        }
        if !(latitude.abs() <= 90.0 && longitude.abs() <= 180.0) {
            return Err(Error::invalid(format!(
                "station {id}: coordinates ({latitude}, {longitude}) out of range"
            )));
        }
        Ok(Self {
            id,
            latitude,
            longitude,
        })
    }
}

/// Great-circle distance on a sphere of radius 6371 km.
pub fn haversine_km(a: &Station, b: &Station) -> f64 {
    let (phi1, phi2) = (a.latitude.to_radians(), b.latitude.to_radians());
    let dphi = phi2 - phi1;
    let dlambda = (b.longitude - a.longitude).to_radians();
    let h = (dphi / 2.0).sin().powi(2) + phi1.cos() * phi2.cos() * (dlambda / 2.0).sin().powi(2);
    2.0 * EARTH_RADIUS_KM * h.sqrt().min(1.0).asin()
}

/// Control run plus exchangeable members, in raw meters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleForecast {
    pub control: f64,
    pub exchangeable: Vec<f64>,
}

impl EnsembleForecast {
    pub fn new(control: f64, exchangeable: Vec<f64>) -> Result<Self> {
        for &v in std::iter::once(&control).chain(&exchangeable) {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::invalid(format!(
                    "ensemble values must be finite and nonnegative, got {v}"
                )));
            }
        }
        Ok(Self {
            control,
            exchangeable,
        })
    }

    /// Ensemble size K (control included).
    pub fn size(&self) -> usize {
        self.exchangeable.len() + 1
    }

    /// All K members, control first.
    pub fn members(&self) -> impl Iterator<Item = f64> + '_ {
        std::iter::once(self.control).chain(self.exchangeable.iter().copied())
    }
}

/// One (station, initialization, lead time) forecast unit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastCase {
    pub station_id: String,
    pub init_time: DateTime<Utc>,
    pub lead_time_h: u32,
    pub ensemble: EnsembleForecast,
    /// Auxiliary deterministic visibility forecast in meters.
    pub aux_forecast: Option<f64>,
    /// Observed category index, when available.
    pub observation: Option<usize>,
}

impl ForecastCase {
    pub fn valid_time(&self) -> DateTime<Utc> {
        self.init_time + Duration::hours(i64::from(self.lead_time_h))
    }

    pub fn init_date(&self) -> NaiveDate {
        self.init_time.date_naive()
    }
}

/// Lead times are multiples of 6 h between 6 and 120 h.
pub fn validate_lead_time(lead_time_h: u32) -> Result<()> {
    if lead_time_h % 6 != 0 || !(6..=120).contains(&lead_time_h) {
        return Err(Error::invalid(format!(
            "lead time {lead_time_h} h is not a multiple of 6 in 6..=120"
        )));
    }
    Ok(())
}

/// Cases are keyed by station index, initialization date and lead time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct CaseKey {
    pub station: usize,
    pub init_date: NaiveDate,
    pub lead_time_h: u32,
}

/// Immutable collection of stations, forecast cases and observations.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    scale: VisibilityScale,
    ensemble_size: usize,
    stations: Vec<Station>,
    station_index: HashMap<String, usize>,
    cases: BTreeMap<CaseKey, ForecastCase>,
    observations: BTreeMap<(usize, DateTime<Utc>), usize>,
}

impl Dataset {
    /// Validates and joins cases with observations by valid time.
    ///
    /// `observations` maps (station id, valid time) to a category index;
    /// each case's `observation` field is overwritten by the join.
    pub fn new(
        scale: VisibilityScale,
        ensemble_size: usize,
        stations: Vec<Station>,
        cases: Vec<ForecastCase>,
        observations: Vec<(String, DateTime<Utc>, usize)>,
    ) -> Result<Self> {
        if ensemble_size < 2 {
            return Err(Error::invalid("ensemble size must be at least 2"));
        }
        let mut station_index = HashMap::with_capacity(stations.len());
        for (i, s) in stations.iter().enumerate() {
            if station_index.insert(s.id.clone(), i).is_some() {
                return Err(Error::Duplicate(format!("station {}", s.id)));
            }
        }
        let resolve = |id: &str| {
            station_index
                .get(id)
                .copied()
                .ok_or_else(|| Error::invalid(format!("unknown station {id}")))
        };

        let mut obs_map = BTreeMap::new();
        for (id, valid, k) in observations {
            if k >= scale.len() {
                return Err(Error::invalid(format!(
                    "observation category {k} out of range at {id} {valid}"
                )));
            }
            if obs_map.insert((resolve(&id)?, valid), k).is_some() {
                return Err(Error::Duplicate(format!(
                    "observation {id} {}",
                    format_time(&valid)
                )));
            }
        }

        let mut case_map = BTreeMap::new();
        for mut case in cases {
            validate_lead_time(case.lead_time_h)?;
            if case.ensemble.size() != ensemble_size {
                return Err(Error::invalid(format!(
                    "case {} {} +{}h has {} members, expected {ensemble_size}",
                    case.station_id,
                    format_time(&case.init_time),
                    case.lead_time_h,
                    case.ensemble.size()
                )));
            }
            let station = resolve(&case.station_id)?;
            case.observation = obs_map.get(&(station, case.valid_time())).copied();
            let key = CaseKey {
                station,
                init_date: case.init_date(),
                lead_time_h: case.lead_time_h,
            };
            if case_map.contains_key(&key) {
                return Err(Error::Duplicate(format!(
                    "case {} {} +{}h",
                    case.station_id,
                    format_time(&case.init_time),
                    case.lead_time_h
                )));
            }
            case_map.insert(key, case);
        }

        Ok(Self {
            scale,
            ensemble_size,
            stations,
            station_index,
            cases: case_map,
            observations: obs_map,
        })
    }

    pub fn scale(&self) -> &VisibilityScale {
        &self.scale
    }

    pub fn ensemble_size(&self) -> usize {
        self.ensemble_size
    }

    pub fn stations(&self) -> &[Station] {
        &self.stations
    }

    pub fn station_idx(&self, id: &str) -> Option<usize> {
        self.station_index.get(id).copied()
    }

    pub fn n_cases(&self) -> usize {
        self.cases.len()
    }

    pub fn cases(&self) -> impl Iterator<Item = &ForecastCase> {
        self.cases.values()
    }

    pub fn case(&self, station: usize, init_date: NaiveDate, lead_time_h: u32) -> Option<&ForecastCase> {
        self.cases.get(&CaseKey {
            station,
            init_date,
            lead_time_h,
        })
    }

    /// Cases of one station and lead time with init dates in `[from, to)`.
    pub fn station_cases(
        &self,
        station: usize,
        lead_time_h: u32,
        from: NaiveDate,
        to: NaiveDate,
    ) -> impl Iterator<Item = &ForecastCase> {
        let lo = CaseKey {
            station,
            init_date: from,
            lead_time_h: 0,
        };
        let hi = CaseKey {
            station,
            init_date: to,
            lead_time_h: 0,
        };
        let range = if lo < hi { Some(self.cases.range(lo..hi)) } else { None };
        range
            .into_iter()
            .flatten()
            .filter(move |(k, _)| k.lead_time_h == lead_time_h)
            .map(|(_, c)| c)
    }

    pub fn observation(&self, station: usize, valid_time: DateTime<Utc>) -> Option<usize> {
        self.observations.get(&(station, valid_time)).copied()
    }

    pub fn observations(&self) -> impl Iterator<Item = (usize, DateTime<Utc>, usize)> + '_ {
        self.observations.iter().map(|(&(s, t), &k)| (s, t, k))
    }

    /// Observations of one station with valid times in `[from, to)`.
    pub fn station_observations(
        &self,
        station: usize,
        from: DateTime<Utc>,
        to: DateTime<Utc>,
    ) -> impl Iterator<Item = (DateTime<Utc>, usize)> + '_ {
        let range = if from < to {
            Some(self.observations.range((station, from)..(station, to)))
        } else {
            None
        };
        range.into_iter().flatten().map(|(&(_, t), &k)| (t, k))
    }

    /// Sorted distinct initialization dates.
    pub fn init_dates(&self) -> Vec<NaiveDate> {
        let set: BTreeSet<NaiveDate> = self.cases.keys().map(|k| k.init_date).collect();
        set.into_iter().collect()
    }

    /// Sorted distinct lead times.
    pub fn lead_times(&self) -> Vec<u32> {
        let set: BTreeSet<u32> = self.cases.keys().map(|k| k.lead_time_h).collect();
        set.into_iter().collect()
    }
}

/// Counters for values adjusted during ingestion.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LoadReport {
    pub forecast_rows: usize,
    pub observation_rows: usize,
    /// Observations above the top of the scale, clamped to the last category.
    pub clamped_observations: usize,
    pub cases_without_observation: usize,
}

#[derive(Debug, Clone)]
pub struct CsvPaths {
    pub forecasts: PathBuf,
    pub aux: Option<PathBuf>,
    pub observations: PathBuf,
    pub stations: PathBuf,
}

impl CsvPaths {
    /// Conventional file names inside one directory.
    pub fn in_dir(dir: impl AsRef<Path>) -> Self {
        let dir = dir.as_ref();
        let aux = dir.join("aux.csv");
        Self {
            forecasts: dir.join("forecasts.csv"),
            aux: aux.exists().then_some(aux),
            observations: dir.join("observations.csv"),
            stations: dir.join("stations.csv"),
        }
    }
}

pub fn format_time(t: &DateTime<Utc>) -> String {
    t.to_rfc3339_opts(SecondsFormat::Secs, true)
}

pub fn parse_time(s: &str) -> std::result::Result<DateTime<Utc>, String> {
    if let Ok(t) = DateTime::parse_from_rfc3339(s) {
        return Ok(t.with_timezone(&Utc));
    }
    if let Ok(t) = NaiveDateTime::parse_from_str(s, "%Y-%m-%dT%H:%M:%S") {
        return Ok(t.and_utc());
    }
    if let Ok(d) = NaiveDate::parse_from_str(s, "%Y-%m-%d") {
        return Ok(d.and_hms_opt(0, 0, 0).expect("midnight").and_utc());
    }
    Err(format!("`{s}` is not an ISO-8601 UTC timestamp"))
}

struct CsvReader {
    path: PathBuf,
    columns: Vec<&'static str>,
    reader: csv::Reader<File>,
}

struct Row<'a> {
    path: &'a Path,
    columns: &'a [&'static str],
    line: u64,
    record: csv::StringRecord,
}

impl Row<'_> {
    fn err(&self, col: usize, message: impl Into<String>) -> Error {
        Error::Csv {
            file: self.path.to_path_buf(),
            line: self.line,
            column: self.columns[col].to_string(),
            message: message.into(),
        }
    }

    fn str(&self, col: usize) -> Result<&str> {
        self.record
            .get(col)
            .map(str::trim)
            .ok_or_else(|| self.err(col, "missing field"))
    }

    fn f64(&self, col: usize) -> Result<f64> {
        let s = self.str(col)?;
        let v: f64 = s.parse().map_err(|_| self.err(col, format!("`{s}` is not a number")))?;
        if !v.is_finite() {
            return Err(self.err(col, "value must be finite"));
        }
        Ok(v)
    }

    fn u32(&self, col: usize) -> Result<u32> {
        let s = self.str(col)?;
        s.parse()
            .map_err(|_| self.err(col, format!("`{s}` is not a nonnegative integer")))
    }

    fn time(&self, col: usize) -> Result<DateTime<Utc>> {
        parse_time(self.str(col)?).map_err(|m| self.err(col, m))
    }

    fn lead(&self, col: usize) -> Result<u32> {
        let lead = self.u32(col)?;
        validate_lead_time(lead).map_err(|e| self.err(col, e.to_string()))?;
        Ok(lead)
    }

    fn meters(&self, col: usize) -> Result<f64> {
        let v = self.f64(col)?;
        if v < 0.0 {
            return Err(self.err(col, format!("negative visibility {v}")));
        }
        Ok(v)
    }
}

impl CsvReader {
    fn open(path: &Path, columns: &[&'static str]) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(file);
        let headers = reader.headers().map_err(|e| csv_error(path, e))?.clone();
        let found: Vec<&str> = headers.iter().map(str::trim).collect();
        if found != columns {
            return Err(Error::Csv {
                file: path.to_path_buf(),
                line: 1,
                column: found.join(","),
                message: format!("expected header `{}`", columns.join(",")),
            });
        }
        Ok(Self {
            path: path.to_path_buf(),
            columns: columns.to_vec(),
            reader,
        })
    }

    fn for_each(mut self, mut f: impl FnMut(&Row<'_>) -> Result<()>) -> Result<usize> {
        let mut record = csv::StringRecord::new();
        let mut n = 0;
        loop {
            match self.reader.read_record(&mut record) {
                Ok(false) => break,
                Ok(true) => {}
                Err(e) => return Err(csv_error(&self.path, e)),
            }
            let line = record.position().map_or(0, |p| p.line());
            let row = Row {
                path: &self.path,
                columns: &self.columns,
                line,
                record: std::mem::take(&mut record),
            };
            if row.record.len() != row.columns.len() {
                return Err(row.err(0, format!(
                    "expected {} fields, found {}",
                    row.columns.len(),
                    row.record.len()
                )));
            }
            f(&row)?;
            record = row.record;
            n += 1;
        }
        Ok(n)
    }
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line());
    Error::Csv {
        file: path.to_path_buf(),
        line,
        column: String::new(),
        message: e.to_string(),
    }
}

/// Reads and joins the station, forecast, auxiliary and observation files.
pub fn ingest_csv(paths: &CsvPaths, ensemble_size: usize) -> Result<(Dataset, LoadReport)> {
    let scale = build_scale();
    let mut report = LoadReport::default();

    let mut stations = Vec::new();
    CsvReader::open(&paths.stations, &["station_id", "lat_deg", "lon_deg"])?.for_each(|row| {
        let station = Station::new(row.str(0)?, row.f64(1)?, row.f64(2)?)
            .map_err(|e| row.err(1, e.to_string()))?;
        stations.push(station);
        Ok(())
    })?;
    let known: HashMap<String, ()> = stations.iter().map(|s| (s.id.clone(), ())).collect();

    type Key = (String, DateTime<Utc>, u32);
    let mut members: BTreeMap<Key, Vec<Option<f64>>> = BTreeMap::new();
    report.forecast_rows = CsvReader::open(
        &paths.forecasts,
        &["station_id", "init_time", "lead_time_h", "member_id", "value_m"],
    )?
    .for_each(|row| {
        let station = row.str(0)?;
        if !known.contains_key(station) {
            return Err(row.err(0, format!("unknown station `{station}`")));
        }
        let member = row.u32(3)? as usize;
        if member >= ensemble_size {
            return Err(row.err(
                3,
                format!("member_id {member} outside 0..{}", ensemble_size - 1),
            ));
        }
        let key = (station.to_string(), row.time(1)?, row.lead(2)?);
        let value = row.meters(4)?;
        let slot = &mut members.entry(key).or_insert_with(|| vec![None; ensemble_size])[member];
        if slot.replace(value).is_some() {
            return Err(row.err(3, format!("duplicate member {member}")));
        }
        Ok(())
    })?;

    let mut aux: HashMap<Key, f64> = HashMap::new();
    if let Some(aux_path) = &paths.aux {
        CsvReader::open(aux_path, &["station_id", "init_time", "lead_time_h", "value_m"])?
            .for_each(|row| {
                let key = (row.str(0)?.to_string(), row.time(1)?, row.lead(2)?);
                if !members.contains_key(&key) {
                    return Err(row.err(0, "no forecast case matches this auxiliary row"));
                }
                if aux.insert(key, row.meters(3)?).is_some() {
                    return Err(row.err(0, "duplicate auxiliary forecast"));
                }
                Ok(())
            })?;
    }

    let mut observations = Vec::new();
    let mut seen_obs = BTreeSet::new();
    report.observation_rows = CsvReader::open(
        &paths.observations,
        &["station_id", "valid_time", "value_m"],
    )?
    .for_each(|row| {
        let station = row.str(0)?;
        if !known.contains_key(station) {
            return Err(row.err(0, format!("unknown station `{station}`")));
        }
        let valid = row.time(1)?;
        let value = row.meters(2)?;
        if value > MAX_VISIBILITY_M {
            report.clamped_observations += 1;
        }
        if !seen_obs.insert((station.to_string(), valid)) {
            return Err(row.err(1, "duplicate observation"));
        }
        let k = scale.discretize(value).map_err(|e| row.err(2, e.to_string()))?;
        observations.push((station.to_string(), valid, k));
        Ok(())
    })?;

    let mut cases = Vec::with_capacity(members.len());
    for (key, values) in members {
        let (station_id, init_time, lead_time_h) = key.clone();
        let values: Option<Vec<f64>> = values.into_iter().collect();
        let Some(values) = values else {
            return Err(Error::Csv {
                file: paths.forecasts.clone(),
                line: 0,
                column: "member_id".into(),
                message: format!(
                    "case {station_id} {} +{lead_time_h}h is missing members",
                    format_time(&init_time)
                ),
            });
        };
        let ensemble = EnsembleForecast::new(values[0], values[1..].to_vec())?;
        cases.push(ForecastCase {
            station_id,
            init_time,
            lead_time_h,
            ensemble,
            aux_forecast: aux.get(&key).copied(),
            observation: None,
        });
    }

    let dataset = Dataset::new(scale, ensemble_size, stations, cases, observations)?;
    report.cases_without_observation = dataset.cases().filter(|c| c.observation.is_none()).count();
    Ok((dataset, report))
}

/// Writes the dataset in the ingestion schemas; `ingest_csv` reads it back
/// unchanged. Observations are written as the meter value of their category.
pub fn write_csv(dataset: &Dataset, dir: impl AsRef<Path>) -> Result<CsvPaths> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let has_aux = dataset.cases().any(|c| c.aux_forecast.is_some());
    let paths = CsvPaths {
        forecasts: dir.join("forecasts.csv"),
        aux: has_aux.then(|| dir.join("aux.csv")),
        observations: dir.join("observations.csv"),
        stations: dir.join("stations.csv"),
    };

    write_file(&paths.stations, |w| {
        writeln!(w, "station_id,lat_deg,lon_deg")?;
        for s in dataset.stations() {
            writeln!(w, "{},{},{}", s.id, s.latitude, s.longitude)?;
        }
        Ok(())
    })?;
    write_file(&paths.forecasts, |w| {
        writeln!(w, "station_id,init_time,lead_time_h,member_id,value_m")?;
        for c in dataset.cases() {
            let init = format_time(&c.init_time);
            for (m, v) in c.ensemble.members().enumerate() {
                writeln!(w, "{},{init},{},{m},{v}", c.station_id, c.lead_time_h)?;
            }
        }
        Ok(())
    })?;
    if let Some(aux_path) = &paths.aux {
        write_file(aux_path, |w| {
            writeln!(w, "station_id,init_time,lead_time_h,value_m")?;
            for c in dataset.cases() {
                if let Some(v) = c.aux_forecast {
                    writeln!(w, "{},{},{},{v}", c.station_id, format_time(&c.init_time), c.lead_time_h)?;
                }
            }
            Ok(())
        })?;
    }
    write_file(&paths.observations, |w| {
        writeln!(w, "station_id,valid_time,value_m")?;
        for (s, t, k) in dataset.observations() {
            writeln!(w, "{},{},{}", dataset.stations()[s].id, format_time(&t), dataset.scale().value(k))?;
        }
        Ok(())
    })?;
    Ok(paths)
}

pub(crate) fn write_file(
    path: &Path,
    f: impl FnOnce(&mut BufWriter<File>) -> std::io::Result<()>,
) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    f(&mut w).and_then(|_| w.flush()).map_err(|e| Error::io(path, e))
}
