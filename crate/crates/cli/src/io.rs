//! CSV dumps of forecasts, scores and reports.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use chrono::NaiveDate;
use viscal_core::domain::{format_time, parse_time};
use viscal_core::mvconstruct::SampleMatrix;
use viscal_core::uniscore::ScoreKind;
use viscal_core::{Dataset, Pmf};

use crate::pipeline::{ClusterRecord, HistogramRow, MvForecast, ReportRow, ScoreRow, SeriesRow, UniForecast};

pub const PMFS: &str = "pmfs.csv";
pub const MV_DIR: &str = "mv";
pub const SCORES: &str = "scores.csv";
pub const SERIES: &str = "series.csv";
pub const HISTOGRAMS: &str = "histograms.csv";
pub const RI: &str = "ri.csv";
pub const REPORT: &str = "report.csv";
pub const CLUSTERS: &str = "clusters.csv";

/// Shortest decimal that parses back to the same value; empty for NaN.
pub fn fmt_f64(v: f64) -> String {
    if v.is_nan() {
        String::new()
    } else {
        ryu::Buffer::new().format(v).to_string()
    }
}

fn parse_f64(s: &str) -> Result<f64> {
    if s.is_empty() {
        return Ok(f64::NAN);
    }
    s.parse().with_context(|| format!("invalid number `{s}`"))
}

fn init_time(date: NaiveDate) -> String {
    format_time(&date.and_hms_opt(0, 0, 0).expect("midnight").and_utc())
}

fn parse_init(s: &str) -> Result<NaiveDate> {
    Ok(parse_time(s).map_err(anyhow::Error::msg)?.date_naive())
}

fn writer(path: &Path) -> Result<csv::Writer<File>> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))
}

fn reader(path: &Path) -> Result<csv::Reader<File>> {
    csv::Reader::from_path(path).with_context(|| format!("opening {}", path.display()))
}

fn finish(mut w: csv::Writer<File>, path: &Path) -> Result<()> {
    w.flush().with_context(|| format!("writing {}", path.display()))
}

pub fn write_pmfs(path: &Path, dataset: &Dataset, forecasts: &[UniForecast]) -> Result<()> {
    let mut w = writer(path)?;
    let mut header = vec!["model".to_string(), "station_id".into(), "init_time".into(), "lead_time_h".into()];
    header.extend(dataset.scale().values().map(|v| format!("p_{v}")));
    w.write_record(&header)?;
    for f in forecasts {
        let mut row = vec![
            f.model.clone(),
            dataset.stations()[f.station].id.clone(),
            init_time(f.init_date),
            f.lead_time_h.to_string(),
        ];
        row.extend(f.pmf.probs().iter().map(|&p| fmt_f64(p)));
        w.write_record(&row)?;
    }
    finish(w, path)
}

pub fn read_pmfs(path: &Path, dataset: &Dataset) -> Result<Vec<UniForecast>> {
    let mut r = reader(path)?;
    let n = dataset.scale().len();
    let mut out = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec.with_context(|| format!("{} row {}", path.display(), i + 2))?;
        if rec.len() != 4 + n {
            bail!("{} row {}: expected {} fields, found {}", path.display(), i + 2, 4 + n, rec.len());
        }
        let station = dataset
            .station_idx(&rec[1])
            .with_context(|| format!("{} row {}: unknown station `{}`", path.display(), i + 2, &rec[1]))?;
        let probs = (4..4 + n).map(|j| parse_f64(&rec[j])).collect::<Result<Vec<_>>>()?;
        out.push(UniForecast {
            model: rec[0].to_string(),
            station,
            init_date: parse_init(&rec[2])?,
            lead_time_h: rec[3].parse().with_context(|| format!("{} row {}: lead time", path.display(), i + 2))?,
            pmf: Pmf::new(probs).with_context(|| format!("{} row {}", path.display(), i + 2))?,
        });
    }
    Ok(out)
}

pub fn mv_file_name(model: &str) -> String {
    format!("{}.csv", model.replace(':', "_"))
}

fn model_from_file(path: &Path) -> Result<String> {
    let stem = path.file_stem().and_then(|s| s.to_str()).with_context(|| format!("bad file name {}", path.display()))?;
    Ok(match stem.rsplit_once('_') {
        Some((m, method)) => format!("{m}:{method}"),
        None => stem.to_string(),
    })
}

/// One file per model under `dir`.
pub fn write_mv(dir: &Path, dataset: &Dataset, forecasts: &[MvForecast]) -> Result<Vec<PathBuf>> {
    let mut by_model: BTreeMap<&str, Vec<&MvForecast>> = BTreeMap::new();
    for f in forecasts {
        by_model.entry(&f.model).or_default().push(f);
    }
    let mut paths = Vec::new();
    for (model, list) in by_model {
        let path = dir.join(mv_file_name(model));
        let mut w = writer(&path)?;
        w.write_record(["init_time", "lead_time_h", "member", "station_id", "value_m"])?;
        for f in list {
            let init = init_time(f.init_date);
            let lead = f.lead_time_h.to_string();
            for m in 0..f.sample.n_members() {
                for (d, station) in dataset.stations().iter().enumerate() {
                    w.write_record([
                        &init,
                        &lead,
                        &(m + 1).to_string(),
                        &station.id,
                        &fmt_f64(f.sample.get(m, d)),
                    ])?;
                }
            }
        }
        finish(w, &path)?;
        paths.push(path);
    }
    Ok(paths)
}

pub fn read_mv(dir: &Path, dataset: &Dataset) -> Result<Vec<MvForecast>> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .with_context(|| format!("listing {}", dir.display()))?
        .map(|e| Ok(e?.path()))
        .collect::<std::io::Result<_>>()?;
    files.retain(|p| p.extension().is_some_and(|e| e == "csv"));
    files.sort();
    let n_stations = dataset.stations().len();
    let mut out = Vec::new();
    for path in files {
        // (model, date, lead) -> member -> station values
        let mut samples: BTreeMap<(String, u32, NaiveDate), BTreeMap<usize, Vec<Option<f64>>>> = BTreeMap::new();
        let model = model_from_file(&path)?;
        let mut r = reader(&path)?;
        for (i, rec) in r.records().enumerate() {
            let rec = rec.with_context(|| format!("{} row {}", path.display(), i + 2))?;
            let ctx = || format!("{} row {}", path.display(), i + 2);
            let station = dataset.station_idx(&rec[3]).with_context(|| format!("{}: unknown station", ctx()))?;
            let member: usize = rec[2].parse().with_context(ctx)?;
            let key = (model.clone(), rec[1].parse().with_context(ctx)?, parse_init(&rec[0])?);
            let row = samples.entry(key).or_default().entry(member).or_insert_with(|| vec![None; n_stations]);
            row[station] = Some(parse_f64(&rec[4])?);
        }
        for ((model, lead, date), members) in samples {
            let rows = members
                .into_values()
                .map(|r| r.into_iter().collect::<Option<Vec<f64>>>())
                .collect::<Option<Vec<_>>>()
                .with_context(|| format!("{}: incomplete sample for {model} {date} lead {lead} h", path.display()))?;
            out.push(MvForecast { model, init_date: date, lead_time_h: lead, sample: SampleMatrix::from_rows(&rows)? });
        }
    }
    out.sort_by(|a, b| (&a.model, a.lead_time_h, a.init_date).cmp(&(&b.model, b.lead_time_h, b.init_date)));
    Ok(out)
}

pub fn write_scores(path: &Path, rows: &[ScoreRow]) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(["model", "lead_time_h", "score", "mean", "n_cases"])?;
    for r in rows {
        w.write_record([&r.model, &r.lead_time_h.to_string(), r.score.as_str(), &fmt_f64(r.mean), &r.n_cases.to_string()])?;
    }
    finish(w, path)
}

pub fn write_series(path: &Path, rows: &[SeriesRow]) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(["model", "lead_time_h", "score", "forecast_date", "value"])?;
    for r in rows {
        w.write_record([&r.model, &r.lead_time_h.to_string(), r.score.as_str(), &r.date.to_string(), &fmt_f64(r.value)])?;
    }
    finish(w, path)
}

fn parse_score(s: &str) -> Result<ScoreKind> {
    Ok(match s {
        "CRPS" => ScoreKind::Crps,
        "LogS" => ScoreKind::Logs,
        "ES" => ScoreKind::Es,
        "VS" => ScoreKind::Vs,
        other => bail!("unknown score `{other}`"),
    })
}

pub fn read_series(path: &Path) -> Result<Vec<SeriesRow>> {
    let mut r = reader(path)?;
    let mut out = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec.with_context(|| format!("{} row {}", path.display(), i + 2))?;
        let ctx = || format!("{} row {}", path.display(), i + 2);
        out.push(SeriesRow {
            model: rec[0].to_string(),
            lead_time_h: rec[1].parse().with_context(ctx)?,
            score: parse_score(&rec[2]).with_context(ctx)?,
            date: rec[3].parse().with_context(ctx)?,
            value: parse_f64(&rec[4]).with_context(ctx)?,
        });
    }
    Ok(out)
}

/// Histograms pooled over lead times.
pub fn write_histograms(path: &Path, rows: &[HistogramRow]) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(["model", "kind", "bin", "count"])?;
    for r in rows.iter().filter(|r| r.lead_time_h.is_none()) {
        for (b, c) in r.histogram.counts.iter().enumerate() {
            w.write_record([&r.model, &r.kind, &(b + 1).to_string(), &c.to_string()])?;
        }
    }
    finish(w, path)
}

/// Reliability indices per lead time, then pooled as `all`.
pub fn write_ri(path: &Path, rows: &[HistogramRow]) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(["model", "lead_time_h", "kind", "ri"])?;
    for r in rows {
        let lead = r.lead_time_h.map_or_else(|| "all".to_string(), |l| l.to_string());
        w.write_record([&r.model, &lead, &r.kind, &fmt_f64(r.ri)])?;
    }
    finish(w, path)
}

pub fn write_report(path: &Path, rows: &[ReportRow]) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(["model", "lead_time_h", "score", "mean", "ci_lo", "ci_hi", "skill_vs", "skill_lo", "skill_hi", "skill"])?;
    for r in rows {
        w.write_record([
            &r.model,
            &r.lead_time_h.to_string(),
            r.score.as_str(),
            &fmt_f64(r.mean),
            &fmt_f64(r.ci_lo),
            &fmt_f64(r.ci_hi),
            r.reference.as_deref().unwrap_or(""),
            &fmt_f64(r.skill_lo),
            &fmt_f64(r.skill_hi),
            &fmt_f64(r.skill),
        ])?;
    }
    finish(w, path)
}

pub fn read_report(path: &Path) -> Result<Vec<ReportRow>> {
    let mut r = reader(path)?;
    let mut out = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec.with_context(|| format!("{} row {}", path.display(), i + 2))?;
        let ctx = || format!("{} row {}", path.display(), i + 2);
        out.push(ReportRow {
            model: rec[0].to_string(),
            lead_time_h: rec[1].parse().with_context(ctx)?,
            score: parse_score(&rec[2]).with_context(ctx)?,
            mean: parse_f64(&rec[3])?,
            ci_lo: parse_f64(&rec[4])?,
            ci_hi: parse_f64(&rec[5])?,
            reference: (!rec[6].is_empty()).then(|| rec[6].to_string()),
            skill_lo: parse_f64(&rec[7])?,
            skill_hi: parse_f64(&rec[8])?,
            skill: parse_f64(&rec[9])?,
        });
    }
    Ok(out)
}

pub fn write_clusters(path: &Path, dataset: &Dataset, rows: &[ClusterRecord]) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(["forecast_date", "lead_time_h", "station_id", "cluster"])?;
    for r in rows {
        w.write_record([
            &r.forecast_date.to_string(),
            &r.lead_time_h.to_string(),
            &dataset.stations()[r.station].id,
            &r.cluster.to_string(),
        ])?;
    }
    finish(w, path)
}
