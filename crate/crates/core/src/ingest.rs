//! Raw stream parsing, vital-sign clipping, daily aggregation of 5-minute
//! sensor epochs, missingness tokens and patient filtering.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{
    validate_record, AdverseEvent, AdverseEventKind, Category, Gender, Observation, PatientRecord,
    StaticProfile, VariableCatalog, VariableId, CONTINUOUS_ABSENCE_DURATION, DAILY_MAX_HR,
    DAILY_TOTAL_STEPS, DAILY_WEAR_PCT, TREATMENT_VARIABLES,
};

pub const EPOCHS_PER_DAY: usize = 288;
pub const HR_BOUNDS: (f64, f64) = (40.0, 200.0);
pub const STEPS_BOUNDS: (f64, f64) = (0.0, 600.0);

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("patient {patient_id}: non-finite {kind} value at t={t_days}")]
    NonFinite {
        patient_id: String,
        kind: SensorKind,
        t_days: f64,
    },
    #[error("day must be non-negative, got {0}")]
    NegativeDay(i64),
    #[error("epoch at t={t_days} lies outside day {day}")]
    EpochOutsideDay { day: i64, t_days: f64 },
    #[error("{path}:{line}: {message}")]
    Malformed {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("unknown variables: {}", .0.join(", "))]
    UnknownVariables(Vec<String>),
    #[error("patient {0} has observations or events but no static row")]
    MissingStatic(String),
    #[error("patient {patient_id} fails validation: {}", violations.join("; "))]
    InvalidRecord {
        patient_id: String,
        violations: Vec<String>,
    },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> IngestError + '_ {
    move |source| IngestError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SensorKind {
    HeartRate,
    Steps,
}

impl fmt::Display for SensorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SensorKind::HeartRate => "heart_rate",
            SensorKind::Steps => "steps",
        })
    }
}

/// One 5-minute wearable reading.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawSensorEpoch {
    pub patient_id: String,
    pub t_days: f64,
    pub kind: SensorKind,
    pub value: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IngestConfig {
    /// Minimum gap between heart-rate epochs that yields an absence token.
    pub gap_threshold_days: f64,
}

impl Default for IngestConfig {
    fn default() -> Self {
        Self {
            gap_threshold_days: 0.5,
        }
    }
}

/// Clamps heart rate into 40–200 bpm and steps into 0–600 per epoch.
pub fn clip_vitals(epoch: RawSensorEpoch) -> Result<RawSensorEpoch, IngestError> {
    if !epoch.value.is_finite() || !epoch.t_days.is_finite() {
        return Err(IngestError::NonFinite {
            patient_id: epoch.patient_id,
            kind: epoch.kind,
            t_days: epoch.t_days,
        });
    }
    let (lo, hi) = match epoch.kind {
        SensorKind::HeartRate => HR_BOUNDS,
        SensorKind::Steps => STEPS_BOUNDS,
    };
    Ok(RawSensorEpoch {
        value: epoch.value.clamp(lo, hi),
        ..epoch
    })
}

/// Day index of a timestamp; a reading at exactly `d.0` belongs to day `d`.
pub fn day_of(t_days: f64) -> i64 {
    t_days.floor() as i64
}

/// 5-minute slot within the day, `0..288`.
fn slot_of(t_days: f64, day: i64) -> usize {
    (((t_days - day as f64) * EPOCHS_PER_DAY as f64).floor() as i64).clamp(0, EPOCHS_PER_DAY as i64 - 1) as usize
}

/// Groups epochs by [`day_of`].
pub fn bucket_by_day(epochs: &[RawSensorEpoch]) -> BTreeMap<i64, Vec<RawSensorEpoch>> {
    let mut out: BTreeMap<i64, Vec<RawSensorEpoch>> = BTreeMap::new();
    for e in epochs {
        out.entry(day_of(e.t_days)).or_default().push(e.clone());
    }
    out
}

/// Summarises one day of clipped epochs into wearable observations stamped at
/// the end of the day (`day + 1`).
///
/// Emits `daily_max_hr`, `daily_total_steps` and `daily_wear_pct`. A day
/// without heart-rate epochs yields only `daily_wear_pct = 0`.
pub fn aggregate_daily(
    patient_id: &str,
    epochs: &[RawSensorEpoch],
    day: i64,
    catalog: &VariableCatalog,
) -> Result<Vec<Observation>, IngestError> {
    if day < 0 {
        return Err(IngestError::NegativeDay(day));
    }
    if let Some(e) = epochs.iter().find(|e| day_of(e.t_days) != day) {
        return Err(IngestError::EpochOutsideDay { day, t_days: e.t_days });
    }
    let t = (day + 1) as f64;
    let obs = |name: &str, value: f64| Observation {
        patient_id: patient_id.to_string(),
        t_days: t,
        variable: catalog.expect_id(name),
        value,
    };
    let mut slots = [false; EPOCHS_PER_DAY];
    let mut max_hr = f64::NEG_INFINITY;
    let mut steps = 0.0;
    let mut n_hr = 0usize;
    for e in epochs {
        match e.kind {
            SensorKind::HeartRate => {
                n_hr += 1;
                max_hr = max_hr.max(e.value);
                slots[slot_of(e.t_days, day)] = true;
            }
            SensorKind::Steps => steps += e.value,
        }
    }
    if n_hr == 0 {
        return Ok(vec![obs(DAILY_WEAR_PCT, 0.0)]);
    }
    let worn = slots.iter().filter(|&&s| s).count();
    Ok(vec![
        obs(DAILY_MAX_HR, max_hr),
        obs(DAILY_TOTAL_STEPS, steps),
        obs(DAILY_WEAR_PCT, 100.0 * worn as f64 / EPOCHS_PER_DAY as f64),
    ])
}

/// One `continuous_absence_duration` token per gap of at least
/// `gap_threshold_days` between consecutive heart-rate epochs, stamped at the
/// end of the gap with the gap length as value.
pub fn absence_tokens(
    patient_id: &str,
    epochs: &[RawSensorEpoch],
    gap_threshold_days: f64,
    catalog: &VariableCatalog,
) -> Vec<Observation> {
    let var = catalog.expect_id(CONTINUOUS_ABSENCE_DURATION);
    let hr_times: Vec<f64> = epochs
        .iter()
        .filter(|e| e.kind == SensorKind::HeartRate)
        .map(|e| e.t_days)
        .collect();
    hr_times
        .windows(2)
        .filter(|w| w[1] - w[0] >= gap_threshold_days)
        .map(|w| Observation {
            patient_id: patient_id.to_string(),
            t_days: w[1],
            variable: var,
            value: w[1] - w[0],
        })
        .collect()
}

/// A clinical-event line: either an adverse outcome, an input-only event
/// variable, or both.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventLine {
    pub patient_id: String,
    pub t_days: f64,
    pub kind: String,
}

/// Resolved meaning of an event kind string.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EventMeaning {
    pub label: Option<AdverseEventKind>,
    pub input: Option<VariableId>,
}

pub fn resolve_event_kind(kind: &str, catalog: &VariableCatalog) -> Option<EventMeaning> {
    if let Some(label) = AdverseEventKind::parse(kind) {
        let input = label.input_variable().and_then(|v| catalog.id_of(v));
        return Some(EventMeaning { label: Some(label), input });
    }
    let id = catalog.id_of(kind)?;
    (catalog.get(id)?.category == Category::Event).then_some(EventMeaning { label: None, input: Some(id) })
}

/// Everything known about one patient before assembly into a record.
#[derive(Debug, Clone, PartialEq)]
pub struct PatientStreams {
    pub patient_id: String,
    pub static_profile: StaticProfile,
    pub monitoring_start_days: f64,
    pub monitoring_end_days: f64,
    pub epochs: Vec<RawSensorEpoch>,
    pub observations: Vec<Observation>,
    pub events: Vec<EventLine>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AssemblyStats {
    pub epochs_clipped: usize,
    pub epochs_outside_span: usize,
    pub duplicates_dropped: usize,
}

impl AssemblyStats {
    fn absorb(&mut self, other: &AssemblyStats) {
        self.epochs_clipped += other.epochs_clipped;
        self.epochs_outside_span += other.epochs_outside_span;
        self.duplicates_dropped += other.duplicates_dropped;
    }
}

/// Turns raw streams into a validated [`PatientRecord`].
///
/// With `aggregate_wearables` set, every whole day inside the monitoring span
/// gets daily wearable observations (a zero-wear marker on days without heart
/// rate) plus absence tokens. Event lines become adverse events and/or event
/// variable observations with value 1.
pub fn assemble_record(
    streams: PatientStreams,
    aggregate_wearables: bool,
    catalog: &VariableCatalog,
    cfg: &IngestConfig,
) -> Result<(PatientRecord, AssemblyStats), IngestError> {
    let PatientStreams {
        patient_id,
        static_profile,
        monitoring_start_days: start,
        monitoring_end_days: end,
        epochs,
        mut observations,
        events,
    } = streams;
    let mut stats = AssemblyStats::default();

    if aggregate_wearables {
        let mut clipped = Vec::with_capacity(epochs.len());
        for e in epochs {
            if !(e.t_days >= start && e.t_days <= end) {
                stats.epochs_outside_span += 1;
                continue;
            }
            let before = e.value;
            let c = clip_vitals(e)?;
            if c.value != before {
                stats.epochs_clipped += 1;
            }
            clipped.push(c);
        }
        clipped.sort_by(|a, b| a.t_days.total_cmp(&b.t_days));
        let buckets = bucket_by_day(&clipped);
        let first_day = start.ceil() as i64;
        let mut day = first_day.max(0);
        while (day + 1) as f64 <= end {
            let day_epochs = buckets.get(&day).map(Vec::as_slice).unwrap_or(&[]);
            observations.extend(aggregate_daily(&patient_id, day_epochs, day, catalog)?);
            day += 1;
        }
        observations.extend(absence_tokens(&patient_id, &clipped, cfg.gap_threshold_days, catalog));
    }

    let mut adverse_events = Vec::new();
    for ev in &events {
        let meaning = resolve_event_kind(ev.kind.trim(), catalog)
            .ok_or_else(|| IngestError::UnknownVariables(vec![ev.kind.clone()]))?;
        if let Some(kind) = meaning.label {
            adverse_events.push(AdverseEvent { t_days: ev.t_days, kind });
        }
        if let Some(var) = meaning.input {
            observations.push(Observation {
                patient_id: patient_id.clone(),
                t_days: ev.t_days,
                variable: var,
                value: 1.0,
            });
        }
    }

    let mut rec = PatientRecord {
        patient_id,
        static_profile,
        observations,
        adverse_events,
        monitoring_start_days: start,
        monitoring_end_days: end,
    };
    // Stable sort keeps file order within equal keys so the dedup keeps the last.
    rec.sort_streams();
    let before = rec.observations.len();
    let mut deduped: Vec<Observation> = Vec::with_capacity(before);
    for o in rec.observations.drain(..) {
        match deduped.last_mut() {
            Some(last) if last.t_days == o.t_days && last.variable == o.variable => *last = o,
            _ => deduped.push(o),
        }
    }
    stats.duplicates_dropped = before - deduped.len();
    rec.observations = deduped;

    let violations = validate_record(&rec, catalog);
    if !violations.is_empty() {
        return Err(IngestError::InvalidRecord {
            patient_id: rec.patient_id,
            violations: violations.iter().map(ToString::to_string).collect(),
        });
    }
    Ok((rec, stats))
}

/// Line shapes accepted in the observations file.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ObservationLine {
    Variable {
        patient_id: String,
        t_days: f64,
        variable: String,
        value: f64,
    },
    Epoch(RawSensorEpoch),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct StaticRow {
    patient_id: String,
    age: f64,
    gender: Gender,
    bmi: f64,
    monitoring_start_days: f64,
    monitoring_end_days: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ParseReport {
    pub patients: usize,
    pub observation_lines: usize,
    pub epoch_lines: usize,
    pub event_lines: usize,
    pub epochs_clipped: usize,
    pub epochs_outside_span: usize,
    pub duplicates_dropped: usize,
}

fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path, mut f: impl FnMut(usize, T) -> Result<(), IngestError>) -> Result<(), IngestError> {
    let file = File::open(path).map_err(io_err(path))?;
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        let value: T = serde_json::from_str(&line).map_err(|e| IngestError::Malformed {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?;
        f(i + 1, value)?;
    }
    Ok(())
}

/// Reads the three cohort files and assembles validated records sorted by
/// patient id.
///
/// The observations file may mix catalog-variable lines with raw sensor
/// epoch lines; if any epoch line is present, daily wearable aggregation runs
/// for every patient.
pub fn parse_cohort(
    observations_path: &Path,
    static_path: &Path,
    events_path: &Path,
    catalog: &VariableCatalog,
    cfg: &IngestConfig,
) -> Result<(Vec<PatientRecord>, ParseReport), IngestError> {
    let mut report = ParseReport::default();
    let mut streams: BTreeMap<String, PatientStreams> = BTreeMap::new();

    let mut reader = csv::Reader::from_path(static_path).map_err(|e| IngestError::Malformed {
        path: static_path.to_path_buf(),
        line: 0,
        message: e.to_string(),
    })?;
    for (i, row) in reader.deserialize::<StaticRow>().enumerate() {
        let row = row.map_err(|e| IngestError::Malformed {
            path: static_path.to_path_buf(),
            line: i + 2,
            message: e.to_string(),
        })?;
        let id = row.patient_id.trim().to_string();
        streams.insert(
            id.clone(),
            PatientStreams {
                patient_id: id,
                static_profile: StaticProfile {
                    age: row.age,
                    gender: row.gender,
                    bmi: row.bmi,
                },
                monitoring_start_days: row.monitoring_start_days,
                monitoring_end_days: row.monitoring_end_days,
                epochs: Vec::new(),
                observations: Vec::new(),
                events: Vec::new(),
            },
        );
    }

    let mut unknown: BTreeSet<String> = BTreeSet::new();
    let mut missing_static: Option<String> = None;
    read_jsonl::<ObservationLine>(observations_path, |_, line| {
        match line {
            ObservationLine::Variable { patient_id, t_days, variable, value } => {
                report.observation_lines += 1;
                let name = variable.trim();
                let Some(var) = catalog.id_of(name) else {
                    unknown.insert(name.to_string());
                    return Ok(());
                };
                let pid = patient_id.trim().to_string();
                match streams.get_mut(&pid) {
                    Some(s) => s.observations.push(Observation { patient_id: pid, t_days, variable: var, value }),
                    None => {
                        missing_static.get_or_insert(pid);
                    }
                }
            }
            ObservationLine::Epoch(mut e) => {
                report.epoch_lines += 1;
                e.patient_id = e.patient_id.trim().to_string();
                match streams.get_mut(&e.patient_id) {
                    Some(s) => s.epochs.push(e),
                    None => {
                        missing_static.get_or_insert(e.patient_id);
                    }
                }
            }
        }
        Ok(())
    })?;

    read_jsonl::<EventLine>(events_path, |line_no, mut ev| {
        report.event_lines += 1;
        ev.kind = ev.kind.trim().to_string();
        ev.patient_id = ev.patient_id.trim().to_string();
        if resolve_event_kind(&ev.kind, catalog).is_none() {
            return Err(IngestError::Malformed {
                path: events_path.to_path_buf(),
                line: line_no,
                message: format!("unknown event kind {:?}", ev.kind),
            });
        }
        match streams.get_mut(&ev.patient_id) {
            Some(s) => s.events.push(ev),
            None => {
                missing_static.get_or_insert(ev.patient_id);
            }
        }
        Ok(())
    })?;

    if !unknown.is_empty() {
        return Err(IngestError::UnknownVariables(unknown.into_iter().collect()));
    }
    if let Some(pid) = missing_static {
        return Err(IngestError::MissingStatic(pid));
    }

    let aggregate = report.epoch_lines > 0;
    let mut totals = AssemblyStats::default();
    let mut records = Vec::with_capacity(streams.len());
    for (_, s) in streams {
        let (rec, stats) = assemble_record(s, aggregate, catalog, cfg)?;
        totals.absorb(&stats);
        records.push(rec);
    }
    report.patients = records.len();
    report.epochs_clipped = totals.epochs_clipped;
    report.epochs_outside_span = totals.epochs_outside_span;
    report.duplicates_dropped = totals.duplicates_dropped;
    if report.duplicates_dropped > 0 {
        log::warn!("{} duplicate (patient, t, variable) observations replaced by the later line", report.duplicates_dropped);
    }
    Ok((records, report))
}

/// Writes records back as the three ingest files (aggregated observations,
/// static CSV, events). Parsing the output reproduces the records.
pub fn write_cohort_files(
    records: &[PatientRecord],
    catalog: &VariableCatalog,
    observations_path: &Path,
    static_path: &Path,
    events_path: &Path,
) -> Result<(), IngestError> {
    let mut obs_out = BufWriter::new(File::create(observations_path).map_err(io_err(observations_path))?);
    let mut ev_out = BufWriter::new(File::create(events_path).map_err(io_err(events_path))?);
    let mut static_out = csv::Writer::from_path(static_path).map_err(|e| IngestError::Malformed {
        path: static_path.to_path_buf(),
        line: 0,
        message: e.to_string(),
    })?;
    let csv_err = |e: csv::Error| IngestError::Malformed {
        path: static_path.to_path_buf(),
        line: 0,
        message: e.to_string(),
    };

    for rec in records {
        static_out
            .serialize(StaticRow {
                patient_id: rec.patient_id.clone(),
                age: rec.static_profile.age,
                gender: rec.static_profile.gender,
                bmi: rec.static_profile.bmi,
                monitoring_start_days: rec.monitoring_start_days,
                monitoring_end_days: rec.monitoring_end_days,
            })
            .map_err(csv_err)?;

        let mut explained: BTreeSet<(u64, VariableId)> = BTreeSet::new();
        let mut event_lines: Vec<EventLine> = Vec::new();
        for ev in &rec.adverse_events {
            if let Some(var) = ev.kind.input_variable().and_then(|v| catalog.id_of(v)) {
                explained.insert((ev.t_days.to_bits(), var));
            }
            event_lines.push(EventLine {
                patient_id: rec.patient_id.clone(),
                t_days: ev.t_days,
                kind: ev.kind.as_str().to_string(),
            });
        }
        for o in &rec.observations {
            let is_event = catalog.get(o.variable).map(|e| e.category) == Some(Category::Event);
            if is_event {
                if !explained.contains(&(o.t_days.to_bits(), o.variable)) {
                    event_lines.push(EventLine {
                        patient_id: rec.patient_id.clone(),
                        t_days: o.t_days,
                        kind: catalog.name(o.variable).to_string(),
                    });
                }
                continue;
            }
            let line = ObservationLine::Variable {
                patient_id: rec.patient_id.clone(),
                t_days: o.t_days,
                variable: catalog.name(o.variable).to_string(),
                value: o.value,
            };
            serde_json::to_writer(&mut obs_out, &line).map_err(|e| IngestError::Malformed {
                path: observations_path.to_path_buf(),
                line: 0,
                message: e.to_string(),
            })?;
            obs_out.write_all(b"\n").map_err(io_err(observations_path))?;
        }
        event_lines.sort_by(|a, b| a.t_days.total_cmp(&b.t_days));
        for ev in event_lines {
            serde_json::to_writer(&mut ev_out, &ev).map_err(|e| IngestError::Malformed {
                path: events_path.to_path_buf(),
                line: 0,
                message: e.to_string(),
            })?;
            ev_out.write_all(b"\n").map_err(io_err(events_path))?;
        }
    }
    static_out.flush().map_err(io_err(static_path))?;
    obs_out.flush().map_err(io_err(observations_path))?;
    ev_out.flush().map_err(io_err(events_path))?;
    Ok(())
}

fn write_line<T: Serialize>(out: &mut impl Write, path: &Path, value: &T) -> Result<(), IngestError> {
    serde_json::to_writer(&mut *out, value).map_err(|e| IngestError::Malformed {
        path: path.to_path_buf(),
        line: 0,
        message: e.to_string(),
    })?;
    out.write_all(b"\n").map_err(io_err(path))
}

/// Writes raw streams as the three ingest files, with sensor epochs as
/// epoch lines in the observations file.
pub fn write_stream_files(
    streams: &[PatientStreams],
    catalog: &VariableCatalog,
    observations_path: &Path,
    static_path: &Path,
    events_path: &Path,
) -> Result<(), IngestError> {
    let mut obs_out = BufWriter::new(File::create(observations_path).map_err(io_err(observations_path))?);
    let mut ev_out = BufWriter::new(File::create(events_path).map_err(io_err(events_path))?);
    let csv_err = |e: csv::Error| IngestError::Malformed {
        path: static_path.to_path_buf(),
        line: 0,
        message: e.to_string(),
    };
    let mut static_out = csv::Writer::from_path(static_path).map_err(csv_err)?;
    for s in streams {
        static_out
            .serialize(StaticRow {
                patient_id: s.patient_id.clone(),
                age: s.static_profile.age,
                gender: s.static_profile.gender,
                bmi: s.static_profile.bmi,
                monitoring_start_days: s.monitoring_start_days,
                monitoring_end_days: s.monitoring_end_days,
            })
            .map_err(csv_err)?;
        for e in &s.epochs {
            write_line(&mut obs_out, observations_path, e)?;
        }
        for o in &s.observations {
            let line = ObservationLine::Variable {
                patient_id: o.patient_id.clone(),
                t_days: o.t_days,
                variable: catalog.name(o.variable).to_string(),
                value: o.value,
            };
            write_line(&mut obs_out, observations_path, &line)?;
        }
        for ev in &s.events {
            write_line(&mut ev_out, events_path, ev)?;
        }
    }
    static_out.flush().map_err(io_err(static_path))?;
    obs_out.flush().map_err(io_err(observations_path))?;
    ev_out.flush().map_err(io_err(events_path))
}

/// Writes one record per line.
pub fn write_cohort_jsonl(records: &[PatientRecord], path: &Path) -> Result<(), IngestError> {
    let mut out = BufWriter::new(File::create(path).map_err(io_err(path))?);
    for rec in records {
        serde_json::to_writer(&mut out, rec).map_err(|e| IngestError::Malformed {
            path: path.to_path_buf(),
            line: 0,
            message: e.to_string(),
        })?;
        out.write_all(b"\n").map_err(io_err(path))?;
    }
    out.flush().map_err(io_err(path))
}

/// Reads records written by [`write_cohort_jsonl`] and re-validates them.
pub fn read_cohort_jsonl(path: &Path, catalog: &VariableCatalog) -> Result<Vec<PatientRecord>, IngestError> {
    let mut records = Vec::new();
    read_jsonl::<PatientRecord>(path, |_, rec| {
        let violations = validate_record(&rec, catalog);
        if !violations.is_empty() {
            return Err(IngestError::InvalidRecord {
                patient_id: rec.patient_id,
                violations: violations.iter().map(ToString::to_string).collect(),
            });
        }
        records.push(rec);
        Ok(())
    })?;
    Ok(records)
}

/// Reads an exclusion list: one patient id per line, blank lines and `#`
/// comments ignored.
pub fn read_exclusion_list(path: &Path) -> Result<BTreeSet<String>, IngestError> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    Ok(text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(str::to_string)
        .collect())
}

/// Patient-level exclusion rule.
#[derive(Debug, Clone, PartialEq)]
pub enum FilterRule {
    /// No observations at all.
    EmptyRecord,
    /// No treatment event inside the monitoring span.
    NoTreatment,
    /// Fewer than `min_days` distinct days with any remote-monitoring data.
    MinRpmDays { min_days: usize },
    /// Externally known exclusions (no follow-up, no device, ...).
    Excluded { ids: BTreeSet<String> },
}

impl FilterRule {
    pub fn rule_id(&self) -> &'static str {
        match self {
            FilterRule::EmptyRecord => "empty_record",
            FilterRule::NoTreatment => "no_treatment",
            FilterRule::MinRpmDays { .. } => "min_rpm_days",
            FilterRule::Excluded { .. } => "exclusion_list",
        }
    }

    pub fn describe(&self) -> String {
        match self {
            FilterRule::EmptyRecord => "patient with empty record".into(),
            FilterRule::NoTreatment => "no treatment received in monitoring period".into(),
            FilterRule::MinRpmDays { min_days } => format!("remote-monitoring data on fewer than {min_days} days"),
            FilterRule::Excluded { ids } => format!("listed in exclusion file ({} ids)", ids.len()),
        }
    }

    /// True when the patient must be dropped.
    pub fn drops(&self, rec: &PatientRecord, catalog: &VariableCatalog) -> bool {
        match self {
            FilterRule::EmptyRecord => rec.observations.is_empty(),
            FilterRule::NoTreatment => {
                let treatments: Vec<VariableId> = TREATMENT_VARIABLES.iter().filter_map(|n| catalog.id_of(n)).collect();
                !rec.observations.iter().any(|o| {
                    treatments.contains(&o.variable)
                        && o.t_days >= rec.monitoring_start_days
                        && o.t_days <= rec.monitoring_end_days
                })
            }
            FilterRule::MinRpmDays { min_days } => rpm_days(rec, catalog) < *min_days,
            FilterRule::Excluded { ids } => ids.contains(&rec.patient_id),
        }
    }
}

/// Empty records, untreated patients, too few monitoring days, then the
/// exclusion list, in first-match order.
pub fn default_rules(excluded: BTreeSet<String>) -> Vec<FilterRule> {
    vec![
        FilterRule::EmptyRecord,
        FilterRule::NoTreatment,
        FilterRule::MinRpmDays { min_days: 3 },
        FilterRule::Excluded { ids: excluded },
    ]
}

/// Distinct days carrying real remote-monitoring data: wearable readings
/// (zero-wear markers and absence tokens excluded) or survey answers.
pub fn rpm_days(rec: &PatientRecord, catalog: &VariableCatalog) -> usize {
    let wear = catalog.id_of(DAILY_WEAR_PCT);
    let absence = catalog.id_of(CONTINUOUS_ABSENCE_DURATION);
    let mut days = BTreeSet::new();
    for o in &rec.observations {
        let Some(entry) = catalog.get(o.variable) else { continue };
        let counts = match entry.category {
            Category::Survey => true,
            Category::Wearable => {
                Some(o.variable) != absence && !(Some(o.variable) == wear && o.value == 0.0)
            }
            Category::Event => false,
        };
        if counts {
            // Daily aggregates sit at the end of their day.
            let day = if entry.category == Category::Wearable && Some(o.variable) != absence {
                day_of(o.t_days) - 1
            } else {
                day_of(o.t_days)
            };
            days.insert(day);
        }
    }
    days.len()
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct FilterReport {
    /// Drop count per rule id, in rule order.
    pub per_rule: Vec<(String, usize)>,
    pub kept: Vec<String>,
    pub dropped: Vec<(String, String)>,
}

impl FilterReport {
    pub fn input_size(&self) -> usize {
        self.kept.len() + self.dropped.len()
    }
}

impl fmt::Display for FilterReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<20} {:>8}", "rule", "dropped")?;
        for (rule, n) in &self.per_rule {
            writeln!(f, "{rule:<20} {n:>8}")?;
        }
        writeln!(f, "{:<20} {:>8}", "population", self.input_size())?;
        writeln!(f, "{:<20} {:>8}", "affected", self.dropped.len())?;
        write!(f, "{:<20} {:>8}", "final", self.kept.len())
    }
}

/// Applies `rules` in order; the first matching rule is credited with the drop.
pub fn apply_filters(
    cohort: Vec<PatientRecord>,
    rules: &[FilterRule],
    catalog: &VariableCatalog,
) -> (Vec<PatientRecord>, FilterReport) {
    let mut counts: HashMap<&'static str, usize> = HashMap::new();
    let mut report = FilterReport::default();
    let mut kept = Vec::new();
    for rec in cohort {
        match rules.iter().find(|r| r.drops(&rec, catalog)) {
            Some(rule) => {
                *counts.entry(rule.rule_id()).or_default() += 1;
                report.dropped.push((rec.patient_id.clone(), rule.rule_id().to_string()));
            }
            None => {
                report.kept.push(rec.patient_id.clone());
                kept.push(rec);
            }
        }
    }
    report.per_rule = rules
        .iter()
        .map(|r| (r.rule_id().to_string(), counts.get(r.rule_id()).copied().unwrap_or(0)))
        .collect();
    (kept, report)
}
