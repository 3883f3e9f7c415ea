//! Sliding-window cutoffs, labels, normalisation, tokenisation and the
//! patient-level train/test split.

use std::collections::BTreeSet;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{AdverseEvent, PatientRecord, ValueKind, VariableCatalog, VariableId};

#[derive(Debug, Error)]
pub enum SamplingError {
    #[error("cohort is empty")]
    EmptyCohort,
    #[error("training set is empty")]
    EmptyTrainingSet,
    #[error("invalid window spec: {0}")]
    InvalidSpec(String),
    #[error("invalid split ratio {0}")]
    InvalidRatio(f64),
    #[error("dataset cache {path}: {message}")]
    Cache { path: String, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WindowSpec {
    pub min_history_days: f64,
    pub horizon_days: f64,
    pub stride_days: f64,
    pub max_tokens: usize,
}

impl Default for WindowSpec {
    fn default() -> Self {
        Self {
            min_history_days: 14.0,
            horizon_days: 28.0,
            stride_days: 1.0,
            max_tokens: 1000,
        }
    }
}

impl WindowSpec {
    pub fn validate(&self) -> Result<(), SamplingError> {
        let ok = self.min_history_days >= 1.0
            && self.horizon_days > 0.0
            && self.stride_days > 0.0
            && self.max_tokens > 0
            && self.min_history_days.is_finite()
            && self.horizon_days.is_finite()
            && self.stride_days.is_finite();
        if ok {
            Ok(())
        } else {
            Err(SamplingError::InvalidSpec(format!("{self:?}")))
        }
    }
}

/// One observation as model input.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Token {
    /// `(t - cutoff) / time_scale`, never positive.
    pub t_rel: f64,
    pub var: VariableId,
    pub v_norm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowSample {
    pub patient_id: String,
    pub cutoff_days: f64,
    pub tokens: Vec<Token>,
    pub static_vec: [f64; 3],
    pub label: u8,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

impl MeanStd {
    pub const IDENTITY: MeanStd = MeanStd { mean: 0.0, std: 1.0 };

    pub fn apply(&self, v: f64) -> f64 {
        (v - self.mean) / self.std
    }
}

pub const STD_FLOOR: f64 = 1e-6;

/// Train-split normalisation statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    /// Indexed by variable id.
    pub variables: Vec<MeanStd>,
    /// age, gender, bmi.
    pub static_fields: [MeanStd; 3],
    pub time_scale_days: f64,
}

impl NormStats {
    pub fn normalize_static(&self, raw: [f64; 3]) -> [f64; 3] {
        [
            self.static_fields[0].apply(raw[0]),
            self.static_fields[1].apply(raw[1]),
            self.static_fields[2].apply(raw[2]),
        ]
    }
}

/// Cutoffs `start + min_history + k * stride` whose full horizon fits inside
/// the monitoring span.
pub fn generate_cutoffs(rec: &PatientRecord, spec: &WindowSpec) -> Vec<f64> {
    let first = rec.monitoring_start_days + spec.min_history_days;
    let mut out = Vec::new();
    let mut k = 0u64;
    loop {
        let cutoff = first + k as f64 * spec.stride_days;
        if cutoff + spec.horizon_days > rec.monitoring_end_days + 1e-9 {
            break;
        }
        out.push(cutoff);
        k += 1;
    }
    out
}

/// 1 iff some event falls in `(cutoff, cutoff + horizon]`.
pub fn label_window(events: &[AdverseEvent], cutoff: f64, horizon: f64) -> u8 {
    let first_after = events.partition_point(|e| e.t_days <= cutoff);
    events
        .get(first_after)
        .map_or(0, |e| u8::from(e.t_days <= cutoff + horizon))
}

/// Per-variable mean and population standard deviation over the given
/// records. Binary variables and the gender flag pass through unchanged.
pub fn compute_norm_stats(
    training: &[&PatientRecord],
    catalog: &VariableCatalog,
    spec: &WindowSpec,
) -> Result<NormStats, SamplingError> {
    if training.is_empty() {
        return Err(SamplingError::EmptyTrainingSet);
    }
    let n_vars = catalog.len();
    let mut count = vec![0usize; n_vars];
    let mut sum = vec![0.0; n_vars];
    for rec in training {
        for o in &rec.observations {
            let i = o.variable.index();
            if i < n_vars {
                count[i] += 1;
                sum[i] += o.value;
            }
        }
    }
    let mean: Vec<f64> = (0..n_vars)
        .map(|i| if count[i] > 0 { sum[i] / count[i] as f64 } else { 0.0 })
        .collect();
    let mut sq = vec![0.0; n_vars];
    for rec in training {
        for o in &rec.observations {
            let i = o.variable.index();
            if i < n_vars {
                sq[i] += (o.value - mean[i]).powi(2);
            }
        }
    }
    let mut variables = Vec::with_capacity(n_vars);
    for entry in &catalog.entries {
        let i = entry.id.index();
        let stat = if entry.value_kind == ValueKind::Binary {
            MeanStd::IDENTITY
        } else if count[i] == 0 {
            log::warn!("variable {} never observed in training; using (0, 1)", entry.name);
            MeanStd::IDENTITY
        } else {
            MeanStd {
                mean: mean[i],
                std: (sq[i] / count[i] as f64).sqrt().max(STD_FLOOR),
            }
        };
        variables.push(stat);
    }

    let field_stat = |f: fn(&PatientRecord) -> f64| {
        let n = training.len() as f64;
        let m = training.iter().map(|r| f(r)).sum::<f64>() / n;
        let v = training.iter().map(|r| (f(r) - m).powi(2)).sum::<f64>() / n;
        MeanStd { mean: m, std: v.sqrt().max(STD_FLOOR) }
    };
    let static_fields = [
        field_stat(|r| r.static_profile.age),
        MeanStd::IDENTITY,
        field_stat(|r| r.static_profile.bmi),
    ];
    Ok(NormStats {
        variables,
        static_fields,
        time_scale_days: spec.horizon_days,
    })
}

/// Builds the model input for one cutoff: every observation at or before the
/// cutoff, truncated to the `max_tokens` most recent.
pub fn tokenize_window(rec: &PatientRecord, cutoff: f64, stats: &NormStats, spec: &WindowSpec) -> WindowSample {
    let visible = rec.observations.partition_point(|o| o.t_days <= cutoff);
    let first = visible.saturating_sub(spec.max_tokens);
    let tokens = rec.observations[first..visible]
        .iter()
        .map(|o| Token {
            t_rel: (o.t_days - cutoff) / stats.time_scale_days,
            var: o.variable,
            v_norm: stats
                .variables
                .get(o.variable.index())
                .copied()
                .unwrap_or(MeanStd::IDENTITY)
                .apply(o.value),
        })
        .collect();
    WindowSample {
        patient_id: rec.patient_id.clone(),
        cutoff_days: cutoff,
        tokens,
        static_vec: stats.normalize_static(rec.static_profile.as_array()),
        label: label_window(&rec.adverse_events, cutoff, spec.horizon_days),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SplitConfig {
    pub train_ratio: f64,
    pub seed: u64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self {
            train_ratio: 0.8,
            seed: 7,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatientSplit {
    pub train: Vec<String>,
    pub test: Vec<String>,
}

impl PatientSplit {
    pub fn is_train(&self, id: &str) -> bool {
        self.train.iter().any(|t| t == id)
    }

    pub fn is_test(&self, id: &str) -> bool {
        self.test.iter().any(|t| t == id)
    }
}

/// Patient-level split stratified on "has at least one adverse event".
///
/// Each stratum sends `round(ratio * n)` of its patients to training. A
/// stratum with a single patient cannot be stratified, so the whole cohort is
/// then split as one group.
pub fn split_patients(cohort: &[PatientRecord], cfg: &SplitConfig) -> Result<PatientSplit, SamplingError> {
    if cohort.is_empty() {
        return Err(SamplingError::EmptyCohort);
    }
    if !(0.0..=1.0).contains(&cfg.train_ratio) {
        return Err(SamplingError::InvalidRatio(cfg.train_ratio));
    }
    let mut with: Vec<String> = Vec::new();
    let mut without: Vec<String> = Vec::new();
    for rec in cohort {
        if rec.has_adverse_event() {
            with.push(rec.patient_id.clone());
        } else {
            without.push(rec.patient_id.clone());
        }
    }
    let mut strata: Vec<Vec<String>> = [with, without].into_iter().filter(|s| !s.is_empty()).collect();
    if strata.iter().any(|s| s.len() < 2) {
        log::warn!("a stratum has fewer than 2 patients; splitting without stratification");
        strata = vec![strata.concat()];
    }
    let mut split = PatientSplit { train: Vec::new(), test: Vec::new() };
    for (k, mut ids) in strata.into_iter().enumerate() {
        ids.sort();
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(k as u64));
        ids.shuffle(&mut rng);
        let n_train = (cfg.train_ratio * ids.len() as f64).round() as usize;
        let test = ids.split_off(n_train);
        split.train.extend(ids);
        split.test.extend(test);
    }
    split.train.sort();
    split.test.sort();
    if split.test.is_empty() {
        log::warn!("split ratio {} leaves the test set empty", cfg.train_ratio);
    }
    Ok(split)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ClassStats {
    pub train_windows: usize,
    pub train_positive: usize,
    pub test_windows: usize,
    pub test_positive: usize,
}

fn rate(pos: usize, n: usize) -> f64 {
    if n == 0 {
        0.0
    } else {
        pos as f64 / n as f64
    }
}

impl ClassStats {
    pub fn train_positive_rate(&self) -> f64 {
        rate(self.train_positive, self.train_windows)
    }

    pub fn test_positive_rate(&self) -> f64 {
        rate(self.test_positive, self.test_windows)
    }

    pub fn positive_rate(&self) -> f64 {
        rate(self.train_positive + self.test_positive, self.train_windows + self.test_windows)
    }
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub train: Vec<WindowSample>,
    pub test: Vec<WindowSample>,
    pub stats: NormStats,
    pub class_stats: ClassStats,
    pub split: PatientSplit,
}

/// All labelled windows of one patient.
pub fn patient_windows(rec: &PatientRecord, stats: &NormStats, spec: &WindowSpec) -> Vec<WindowSample> {
    generate_cutoffs(rec, spec)
        .into_iter()
        .map(|c| tokenize_window(rec, c, stats, spec))
        .collect()
}

/// Splits patients, fits statistics on the training side only and tokenises
/// every window on both sides.
pub fn build_dataset(
    cohort: &[PatientRecord],
    spec: &WindowSpec,
    split_cfg: &SplitConfig,
    catalog: &VariableCatalog,
) -> Result<Dataset, SamplingError> {
    spec.validate()?;
    let split = split_patients(cohort, split_cfg)?;
    build_dataset_with_split(cohort, spec, split, catalog)
}

/// As [`build_dataset`] with a precomputed split.
pub fn build_dataset_with_split(
    cohort: &[PatientRecord],
    spec: &WindowSpec,
    split: PatientSplit,
    catalog: &VariableCatalog,
) -> Result<Dataset, SamplingError> {
    let train_ids: BTreeSet<&str> = split.train.iter().map(String::as_str).collect();
    let train_recs: Vec<&PatientRecord> = cohort.iter().filter(|r| train_ids.contains(r.patient_id.as_str())).collect();
    let stats = compute_norm_stats(&train_recs, catalog, spec)?;
    let mut train = Vec::new();
    let mut test = Vec::new();
    for rec in cohort {
        let windows = patient_windows(rec, &stats, spec);
        if train_ids.contains(rec.patient_id.as_str()) {
            train.extend(windows);
        } else if split.is_test(&rec.patient_id) {
            test.extend(windows);
        }
    }
    let class_stats = ClassStats {
        train_windows: train.len(),
        train_positive: train.iter().filter(|s| s.label == 1).count(),
        test_windows: test.len(),
        test_positive: test.iter().filter(|s| s.label == 1).count(),
    };
    if class_stats.train_positive + class_stats.test_positive == 0 {
        log::warn!("no positive windows in the dataset");
    }
    Ok(Dataset { train, test, stats, class_stats, split })
}

pub const CACHE_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
struct CacheHeader {
    format_version: u32,
    spec: WindowSpec,
    norm_stats: NormStats,
    split: PatientSplit,
    class_stats: ClassStats,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum CacheSide {
    Train,
    Test,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct CacheLine {
    side: CacheSide,
    #[serde(flatten)]
    sample: WindowSample,
}

fn cache_err(path: &Path, e: impl ToString) -> SamplingError {
    SamplingError::Cache {
        path: path.display().to_string(),
        message: e.to_string(),
    }
}

/// Writes a dataset as JSON lines: a header object, then one sample per line.
pub fn write_dataset_cache(ds: &Dataset, spec: &WindowSpec, path: &Path) -> Result<(), SamplingError> {
    let mut out = BufWriter::new(File::create(path).map_err(|e| cache_err(path, e))?);
    let header = CacheHeader {
        format_version: CACHE_FORMAT_VERSION,
        spec: *spec,
        norm_stats: ds.stats.clone(),
        split: ds.split.clone(),
        class_stats: ds.class_stats,
    };
    serde_json::to_writer(&mut out, &header).map_err(|e| cache_err(path, e))?;
    out.write_all(b"\n").map_err(|e| cache_err(path, e))?;
    for (side, samples) in [(CacheSide::Train, &ds.train), (CacheSide::Test, &ds.test)] {
        for s in samples {
            let line = CacheLine { side: side.clone(), sample: s.clone() };
            serde_json::to_writer(&mut out, &line).map_err(|e| cache_err(path, e))?;
            out.write_all(b"\n").map_err(|e| cache_err(path, e))?;
        }
    }
    out.flush().map_err(|e| cache_err(path, e))
}

/// Reads a cache written by [`write_dataset_cache`], returning it with the
/// window spec it was built with.
pub fn read_dataset_cache(path: &Path) -> Result<(Dataset, WindowSpec), SamplingError> {
    let file = File::open(path).map_err(|e| cache_err(path, e))?;
    let mut lines = BufReader::new(file).lines();
    let header_line = lines
        .next()
        .ok_or_else(|| cache_err(path, "missing header"))?
        .map_err(|e| cache_err(path, e))?;
    let header: CacheHeader = serde_json::from_str(&header_line).map_err(|e| cache_err(path, e))?;
    if header.format_version != CACHE_FORMAT_VERSION {
        return Err(cache_err(path, format!("unsupported format_version {}", header.format_version)));
    }
    let mut ds = Dataset {
        train: Vec::new(),
        test: Vec::new(),
        stats: header.norm_stats,
        class_stats: header.class_stats,
        split: header.split,
    };
    for line in lines {
        let line = line.map_err(|e| cache_err(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let l: CacheLine = serde_json::from_str(&line).map_err(|e| cache_err(path, e))?;
        match l.side {
            CacheSide::Train => ds.train.push(l.sample),
            CacheSide::Test => ds.test.push(l.sample),
        }
    }
    Ok((ds, header.spec))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{catalog_default, AdverseEventKind, Gender, Observation, StaticProfile, WELLNESS_CHECKIN};

    fn rec(id: &str, span: f64) -> PatientRecord {
        PatientRecord {
            patient_id: id.into(),
            static_profile: StaticProfile { age: 60.0, gender: Gender::Male, bmi: 25.0 },
            observations: vec![],
            adverse_events: vec![],
            monitoring_start_days: 0.0,
            monitoring_end_days: span,
        }
    }

    fn ev(t: f64) -> AdverseEvent {
        AdverseEvent { t_days: t, kind: AdverseEventKind::AeVisit }
    }

    #[test]
    fn cutoff_counts() {
        let spec = WindowSpec::default();
        let c = generate_cutoffs(&rec("a", 70.0), &spec);
        assert_eq!(c.len(), 29);
        assert_eq!((c[0], c[28]), (14.0, 42.0));
        assert!(generate_cutoffs(&rec("a", 41.0), &spec).is_empty());
        assert_eq!(generate_cutoffs(&rec("a", 42.0), &spec), vec![14.0]);
    }

    #[test]
    fn labels_use_half_open_horizon() {
        let events = [ev(40.0)];
        assert_eq!(label_window(&events, 30.0, 28.0), 1);
        assert_eq!(label_window(&[ev(59.0)], 30.0, 28.0), 0);
        assert_eq!(label_window(&[ev(30.0)], 30.0, 28.0), 0);
        assert_eq!(label_window(&[ev(58.0)], 30.0, 28.0), 1);
        assert_eq!(label_window(&[ev(10.0), ev(30.0), ev(70.0)], 30.0, 28.0), 0);
        assert_eq!(label_window(&[], 30.0, 28.0), 0);
    }

    fn obs(var: VariableId, t: f64, v: f64) -> Observation {
        Observation { patient_id: "a".into(), t_days: t, variable: var, value: v }
    }

    #[test]
    fn norm_stats_rules() {
        let c = catalog_default();
        let hr = c.expect_id("daily_max_hr");
        let steps = c.expect_id("daily_total_steps");
        let wc = c.expect_id(WELLNESS_CHECKIN);
        let mut r = rec("a", 50.0);
        r.observations = vec![obs(hr, 1.0, 5.0), obs(steps, 1.0, 0.0), obs(wc, 1.0, 1.0), obs(hr, 2.0, 5.0), obs(steps, 2.0, 10.0)];
        let s = compute_norm_stats(&[&r], &c, &WindowSpec::default()).unwrap();
        assert_eq!(s.variables[hr.index()], MeanStd { mean: 5.0, std: STD_FLOOR });
        assert_eq!(s.variables[hr.index()].apply(5.0), 0.0);
        assert_eq!(s.variables[steps.index()], MeanStd { mean: 5.0, std: 5.0 });
        assert_eq!(s.variables[wc.index()], MeanStd::IDENTITY);
        assert_eq!(s.variables[c.expect_id("qor15_total").index()], MeanStd::IDENTITY);
        assert_eq!(s.static_fields[1], MeanStd::IDENTITY);
        assert_eq!(s.time_scale_days, 28.0);
        assert!(matches!(compute_norm_stats(&[], &c, &WindowSpec::default()), Err(SamplingError::EmptyTrainingSet)));
    }

    #[test]
    fn tokenize_centres_and_truncates() {
        let c = catalog_default();
        let hr = c.expect_id("daily_max_hr");
        let wear = c.expect_id("daily_wear_pct");
        let mut r = rec("a", 100.0);
        for i in 0..600 {
            let t = i as f64 * 0.05;
            r.observations.push(obs(hr, t, 100.0));
            r.observations.push(obs(wear, t, 50.0));
        }
        r.sort_streams();
        let stats = compute_norm_stats(&[&r], &c, &WindowSpec::default()).unwrap();
        let spec = WindowSpec::default();
        let cutoff = 599.0 * 0.05;
        let s = tokenize_window(&r, cutoff, &stats, &spec);
        assert_eq!(s.tokens.len(), 1000);
        let last = s.tokens.last().unwrap();
        assert_eq!((last.t_rel, last.v_norm), (0.0, 0.0));
        // 1,200 visible tokens; the 200 oldest go.
        let oldest_kept = s.tokens[0].t_rel * 28.0 + cutoff;
        assert!((oldest_kept - 5.0).abs() < 1e-9, "{oldest_kept}");
        assert!(s.tokens.iter().all(|t| t.t_rel <= 0.0));
    }

    #[test]
    fn truncation_breaks_ties_by_variable_id() {
        let c = catalog_default();
        let hr = c.expect_id("daily_max_hr");
        let wear = c.expect_id("daily_wear_pct");
        let mut r = rec("a", 100.0);
        r.observations = vec![obs(hr, 1.0, 1.0), obs(wear, 1.0, 1.0), obs(hr, 2.0, 1.0)];
        let stats = compute_norm_stats(&[&r], &c, &WindowSpec::default()).unwrap();
        let spec = WindowSpec { max_tokens: 2, ..Default::default() };
        let s = tokenize_window(&r, 2.0, &stats, &spec);
        assert_eq!(s.tokens.iter().map(|t| t.var).collect::<Vec<_>>(), vec![wear, hr]);
    }

    fn cohort(n_event: usize, n_plain: usize) -> Vec<PatientRecord> {
        let mut v = Vec::new();
        for i in 0..n_event {
            let mut r = rec(&format!("e{i:02}"), 60.0);
            r.adverse_events.push(ev(20.0));
            v.push(r);
        }
        for i in 0..n_plain {
            v.push(rec(&format!("n{i:02}"), 60.0));
        }
        v
    }

    #[test]
    fn stratified_split_counts() {
        let c = cohort(17, 33);
        let s = split_patients(&c, &SplitConfig { train_ratio: 0.8, seed: 3 }).unwrap();
        let ev_train = s.train.iter().filter(|id| id.starts_with('e')).count();
        let plain_train = s.train.iter().filter(|id| id.starts_with('n')).count();
        assert!((13..=14).contains(&ev_train));
        assert!((26..=27).contains(&plain_train));
        assert_eq!(s.train.len() + s.test.len(), 50);
        assert!(s.train.iter().all(|id| !s.is_test(id)));
        let again = split_patients(&c, &SplitConfig { train_ratio: 0.8, seed: 3 }).unwrap();
        assert_eq!(s, again);
    }

    #[test]
    fn split_edge_cases() {
        let c = cohort(3, 5);
        let all = split_patients(&c, &SplitConfig { train_ratio: 1.0, seed: 1 }).unwrap();
        assert_eq!(all.train.len(), 8);
        assert!(all.test.is_empty());
        assert!(matches!(split_patients(&[], &SplitConfig::default()), Err(SamplingError::EmptyCohort)));
        // Singleton stratum falls back to a pooled split.
        let s = split_patients(&cohort(1, 9), &SplitConfig::default()).unwrap();
        assert_eq!(s.train.len(), 8);
    }

    #[test]
    fn dataset_without_events_is_all_negative() {
        let c = catalog_default();
        let hr = c.expect_id("daily_max_hr");
        let mut co = cohort(0, 6);
        for r in &mut co {
            r.observations = (0..60).map(|d| obs(hr, d as f64, 70.0)).collect();
        }
        let ds = build_dataset(&co, &WindowSpec::default(), &SplitConfig::default(), &c).unwrap();
        assert!(ds.train.iter().chain(&ds.test).all(|s| s.label == 0));
        assert_eq!(ds.class_stats.positive_rate(), 0.0);
        assert_eq!(ds.class_stats.train_windows + ds.class_stats.test_windows, 6 * 19);
    }

    #[test]
    fn cache_round_trip() {
        let c = catalog_default();
        let hr = c.expect_id("daily_max_hr");
        let mut co = cohort(2, 3);
        for r in &mut co {
            r.observations = (0..60).map(|d| obs(hr, d as f64 + 0.5, 70.0 + d as f64)).collect();
        }
        let spec = WindowSpec { stride_days: 5.0, ..Default::default() };
        let ds = build_dataset(&co, &spec, &SplitConfig::default(), &c).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cache.jsonl");
        write_dataset_cache(&ds, &spec, &path).unwrap();
        let (back, spec_back) = read_dataset_cache(&path).unwrap();
        assert_eq!(spec_back, spec);
        assert_eq!(back.train, ds.train);
        assert_eq!(back.test, ds.test);
        assert_eq!(back.stats, ds.stats);
    }
}
