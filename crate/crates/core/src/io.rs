//! On-disk formats: observation streams, manifests, results, curves,
//! improvement tables and episode logs.
//!
//! Observation files use shortest round-trip float formatting, so reading a
//! written file gives back the same values bit for bit. Result files use six
//! decimals.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::{BufRead, Read, Write};

use crate::error::{Error, Result};
use crate::features::{CovariateRecord, COVARIATE_NAMES};
use crate::harness::{CurvePoint, DayCounts, EpisodeLog, ImprovementRow, MetricsRow};
use crate::synth::{DayBatch, ObservationEvent};

/// Placeholder for a missing value in result files.
pub const NA: &str = "NA";

pub const RESULTS_HEADER: [&str; 7] = [
    "policy",
    "param",
    "target_share",
    "realized_share",
    "detection_rate",
    "seed",
    "sigma_u",
];

pub const CURVE_HEADER: [&str; 7] = [
    "policy",
    "target_share",
    "replicas",
    "mean_share",
    "mean_detection",
    "min_detection",
    "max_detection",
];

pub const IMPROVEMENT_HEADER: [&str; 9] = [
    "target_share",
    "linucb",
    "prob_etc",
    "pp",
    "pct",
    "reference_linucb",
    "reference_prob_etc",
    "reference_pp",
    "reference_pct",
];

pub const EPISODE_HEADER: [&str; 5] = ["day", "observations", "monitored", "toxic_total", "toxic_detected"];

pub fn observation_header(with_toxic: bool) -> Vec<&'static str> {
    let mut h = vec!["day", "match_id", "player_id"];
    h.extend(COVARIATE_NAMES);
    if with_toxic {
        h.push("toxic");
    }
    h
}

/// Streams observation rows out day by day.
pub struct ObservationWriter<W: Write> {
    inner: csv::Writer<W>,
    with_toxic: bool,
    rows: u64,
    toxic: u64,
}

impl<W: Write> ObservationWriter<W> {
    pub fn new(out: W, with_toxic: bool) -> Result<Self> {
        let mut inner = csv::Writer::from_writer(out);
        inner.write_record(observation_header(with_toxic))?;
        Ok(Self {
            inner,
            with_toxic,
            rows: 0,
            toxic: 0,
        })
    }

    pub fn write_event(&mut self, e: &ObservationEvent) -> Result<()> {
        let c = &e.covariates;
        let mut rec: Vec<String> = vec![
            e.day.to_string(),
            e.match_id.to_string(),
            e.player_id.to_string(),
            c.skill_level.to_string(),
            c.avg_skill_diff_opponents.to_string(),
            c.avg_skill_diff_teammates.to_string(),
            u8::from(c.has_party_teammates).to_string(),
            c.prop_party_teammates.to_string(),
            c.matches_in_session.to_string(),
            c.reports_against_24h.to_string(),
            c.reports_by_24h.to_string(),
        ];
        if self.with_toxic {
            rec.push(u8::from(e.toxic).to_string());
        }
        self.inner.write_record(&rec)?;
        self.rows += 1;
        self.toxic += u64::from(e.toxic);
        Ok(())
    }

    pub fn write_batch(&mut self, batch: &DayBatch) -> Result<()> {
        batch.events.iter().try_for_each(|e| self.write_event(e))
    }

    pub fn rows(&self) -> u64 {
        self.rows
    }

    pub fn toxic(&self) -> u64 {
        self.toxic
    }

    pub fn finish(mut self) -> Result<W> {
        self.inner.flush()?;
        self.inner
            .into_inner()
            .map_err(|e| Error::Io(std::io::Error::other(e.to_string())))
    }
}

/// A parsed observation file.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationFile {
    pub batches: Vec<DayBatch>,
    /// Whether the file carried a `toxic` column. Without it every event
    /// reads as non-toxic.
    pub labeled: bool,
}

fn schema(row: usize, column: &str, message: impl Into<String>) -> Error {
    Error::Schema {
        row,
        column: column.to_string(),
        message: message.into(),
    }
}

fn field<T: std::str::FromStr>(rec: &csv::StringRecord, idx: usize, header: &[&str], row: usize) -> Result<T> {
    let raw = rec.get(idx).ok_or_else(|| schema(row, header[idx], "missing field"))?;
    raw.trim()
        .parse()
        .map_err(|_| schema(row, header[idx], format!("cannot parse `{raw}`")))
}

fn finite(rec: &csv::StringRecord, idx: usize, header: &[&str], row: usize) -> Result<f64> {
    let v: f64 = field(rec, idx, header, row)?;
    if !v.is_finite() {
        return Err(schema(row, header[idx], format!("non-finite value {v}")));
    }
    Ok(v)
}

fn flag(rec: &csv::StringRecord, idx: usize, header: &[&str], row: usize) -> Result<bool> {
    match field::<u8>(rec, idx, header, row)? {
        0 => Ok(false),
        1 => Ok(true),
        v => Err(schema(row, header[idx], format!("expected 0 or 1, got {v}"))),
    }
}

/// Reads an observation file. Rows must be grouped by day, starting at day 0
/// with no gaps. Rows are numbered as file lines, the header being line 1.
pub fn read_observations<R: Read>(input: R) -> Result<ObservationFile> {
    let mut reader = csv::ReaderBuilder::new().has_headers(false).flexible(true).from_reader(input);
    let mut records = reader.records();
    let head = records
        .next()
        .transpose()?
        .ok_or_else(|| schema(1, "header", "empty file"))?;
    let got: Vec<&str> = head.iter().map(str::trim).collect();
    let labeled = if got == observation_header(true) {
        true
    } else if got == observation_header(false) {
        false
    } else {
        let want = observation_header(true);
        let col = got
            .iter()
            .zip(&want)
            .find(|(g, w)| g != w)
            .map_or("header".to_string(), |(g, _)| g.to_string());
        return Err(schema(
            1,
            &col,
            format!("expected header `{}` (toxic optional)", want.join(",")),
        ));
    };
    let header = observation_header(labeled);
    let mut batches: Vec<DayBatch> = Vec::new();
    for (i, rec) in records.enumerate() {
        let row = i + 2;
        let rec = rec?;
        if rec.len() != header.len() {
            let column = header.get(rec.len()).copied().unwrap_or("toxic");
            return Err(schema(
                row,
                column,
                format!("expected {} fields, found {}", header.len(), rec.len()),
            ));
        }
        let day: u32 = field(&rec, 0, &header, row)?;
        let covariates = CovariateRecord {
            skill_level: finite(&rec, 3, &header, row)?,
            avg_skill_diff_opponents: finite(&rec, 4, &header, row)?,
            avg_skill_diff_teammates: finite(&rec, 5, &header, row)?,
            has_party_teammates: flag(&rec, 6, &header, row)?,
            prop_party_teammates: finite(&rec, 7, &header, row)?,
            matches_in_session: field(&rec, 8, &header, row)?,
            reports_against_24h: field(&rec, 9, &header, row)?,
            reports_by_24h: field(&rec, 10, &header, row)?,
        };
        covariates
            .validate()
            .map_err(|e| schema(row, "covariates", e.to_string()))?;
        let event = ObservationEvent {
            day,
            match_id: field(&rec, 1, &header, row)?,
            player_id: field(&rec, 2, &header, row)?,
            covariates,
            toxic: labeled && flag(&rec, 11, &header, row)?,
        };
        let current = batches.len() as u32;
        if current > 0 && day == current - 1 {
            batches.last_mut().expect("non-empty").events.push(event);
        } else if day == current {
            batches.push(DayBatch {
                day,
                events: vec![event],
            });
        } else {
            return Err(schema(
                row,
                "day",
                format!("day {day} out of order; expected {} or {current}", current.saturating_sub(1)),
            ));
        }
    }
    Ok(ObservationFile { batches, labeled })
}

/// `key = value` lines, sorted by key.
pub fn write_manifest<W: Write>(mut out: W, entries: &BTreeMap<String, String>) -> Result<()> {
    let mut s = String::new();
    for (k, v) in entries {
        writeln!(s, "{k} = {v}").unwrap();
    }
    out.write_all(s.as_bytes())?;
    Ok(())
}

pub fn read_manifest<R: BufRead>(input: R) -> Result<BTreeMap<String, String>> {
    let mut map = BTreeMap::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("manifest line {}: expected `key = value`", i + 1)))?;
        map.insert(k.trim().to_string(), v.trim().to_string());
    }
    Ok(map)
}

fn fixed(v: f64) -> String {
    format!("{v:.6}")
}

fn fixed_opt(v: Option<f64>) -> String {
    v.map_or_else(|| NA.to_string(), fixed)
}

fn parse_opt(rec: &csv::StringRecord, idx: usize, header: &[&str], row: usize) -> Result<Option<f64>> {
    if rec.get(idx).map(str::trim) == Some(NA) {
        return Ok(None);
    }
    finite(rec, idx, header, row).map(Some)
}

fn check_header(reader: &mut csv::Reader<impl Read>, want: &[&str]) -> Result<()> {
    let got = reader.headers()?.clone();
    let got: Vec<&str> = got.iter().map(str::trim).collect();
    if got != want {
        return Err(schema(1, "header", format!("expected `{}`", want.join(","))));
    }
    Ok(())
}

pub fn write_results<W: Write>(out: W, rows: &[MetricsRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(RESULTS_HEADER)?;
    for r in rows {
        w.write_record([
            r.policy.clone(),
            fixed(r.param),
            fixed_opt(r.target_share),
            fixed(r.realized_share),
            fixed_opt(r.detection_rate),
            r.seed.to_string(),
            fixed_opt(r.sigma_u),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_results<R: Read>(input: R) -> Result<Vec<MetricsRow>> {
    let mut reader = csv::Reader::from_reader(input);
    check_header(&mut reader, &RESULTS_HEADER)?;
    let h = &RESULTS_HEADER;
    reader
        .records()
        .enumerate()
        .map(|(i, rec)| {
            let row = i + 2;
            let rec = rec?;
            let policy = rec.get(0).ok_or_else(|| schema(row, h[0], "missing field"))?;
            Ok(MetricsRow {
                policy: policy.trim().to_string(),
                param: finite(&rec, 1, h, row)?,
                target_share: parse_opt(&rec, 2, h, row)?,
                realized_share: finite(&rec, 3, h, row)?,
                detection_rate: parse_opt(&rec, 4, h, row)?,
                seed: field(&rec, 5, h, row)?,
                sigma_u: parse_opt(&rec, 6, h, row)?,
            })
        })
        .collect()
}

pub fn write_curve<W: Write>(out: W, points: &[CurvePoint]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CURVE_HEADER)?;
    for p in points {
        w.write_record([
            p.policy.clone(),
            fixed(p.target_share),
            p.replicas.to_string(),
            fixed(p.mean_share),
            fixed_opt(p.mean_detection),
            fixed_opt(p.min_detection),
            fixed_opt(p.max_detection),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Measured improvements next to the published ones. Percentages and
/// percentage points use two decimals.
pub fn write_improvement<W: Write>(out: W, rows: &[ImprovementRow]) -> Result<()> {
    let two = |v: f64| format!("{v:.2}");
    let mut w = csv::Writer::from_writer(out);
    w.write_record(IMPROVEMENT_HEADER)?;
    for r in rows {
        let (ref_lin, ref_etc, ref_pp, ref_pct) = match r.reference {
            Some((etc, lin)) => {
                let (pp, pct) = crate::harness::improvement(lin, etc);
                (
                    format!("{lin:.4}"),
                    format!("{etc:.4}"),
                    two(pp),
                    pct.map_or_else(|| NA.to_string(), two),
                )
            }
            None => (NA.into(), NA.into(), NA.into(), NA.into()),
        };
        w.write_record([
            fixed(r.target_share),
            fixed(r.linucb),
            fixed(r.prob_etc),
            two(r.pp),
            r.pct.map_or_else(|| NA.to_string(), two),
            ref_lin,
            ref_etc,
            ref_pp,
            ref_pct,
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_episode_log<W: Write>(out: W, log: &EpisodeLog) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(EPISODE_HEADER)?;
    for d in &log.days {
        w.write_record([
            d.day.to_string(),
            d.observations.to_string(),
            d.monitored.to_string(),
            d.toxic_total.to_string(),
            d.toxic_detected.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_episode_log<R: Read>(input: R) -> Result<EpisodeLog> {
    let mut reader = csv::Reader::from_reader(input);
    check_header(&mut reader, &EPISODE_HEADER)?;
    let h = &EPISODE_HEADER;
    let days = reader
        .records()
        .enumerate()
        .map(|(i, rec)| {
            let row = i + 2;
            let rec = rec?;
            let d = DayCounts {
                day: field(&rec, 0, h, row)?,
                observations: field(&rec, 1, h, row)?,
                monitored: field(&rec, 2, h, row)?,
                toxic_total: field(&rec, 3, h, row)?,
                toxic_detected: field(&rec, 4, h, row)?,
            };
            if d.monitored > d.observations || d.toxic_detected > d.monitored.min(d.toxic_total) {
                return Err(schema(row, "monitored", "counts violate conservation"));
            }
            Ok(d)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(EpisodeLog { days })
}
