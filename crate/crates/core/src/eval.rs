//! Metrics, bootstrap confidence intervals, attention-based feature
//! importance and per-patient risk trajectories.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{Category, PatientRecord, VariableCatalog, VariableId};
use crate::model::{train, Forecaster, ModelConfig, ModelError};
use crate::sampling::{
    compute_norm_stats, patient_windows, split_patients, NormStats, SamplingError, SplitConfig, WindowSample, WindowSpec,
};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("no predictions to evaluate")]
    Empty,
    #[error("{preds} predictions but {labels} labels")]
    LengthMismatch { preds: usize, labels: usize },
    #[error("AUROC undefined: labels contain a single class")]
    SingleClass,
    #[error("monitoring span {span} days is shorter than the {min_history}-day minimum history")]
    SpanTooShort { span: f64, min_history: f64 },
    #[error("bootstrap iteration {iteration}: no two-class resample after {attempts} attempts")]
    ResampleExhausted { iteration: usize, attempts: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Sampling(#[from] SamplingError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

fn check_lengths(preds: &[f64], labels: &[u8]) -> Result<(), EvalError> {
    if preds.len() != labels.len() {
        return Err(EvalError::LengthMismatch { preds: preds.len(), labels: labels.len() });
    }
    if preds.is_empty() {
        return Err(EvalError::Empty);
    }
    Ok(())
}

/// Fraction of windows where `pred >= threshold` agrees with the label.
pub fn accuracy(preds: &[f64], labels: &[u8], threshold: f64) -> Result<f64, EvalError> {
    check_lengths(preds, labels)?;
    let hits = preds
        .iter()
        .zip(labels)
        .filter(|(p, y)| (**p >= threshold) == (**y == 1))
        .count();
    Ok(hits as f64 / preds.len() as f64)
}

fn class_counts(labels: &[u8]) -> (usize, usize) {
    let pos = labels.iter().filter(|&&y| y == 1).count();
    (pos, labels.len() - pos)
}

/// Mann-Whitney AUROC via average ranks.
pub fn auroc(preds: &[f64], labels: &[u8]) -> Result<f64, EvalError> {
    check_lengths(preds, labels)?;
    let (n_pos, n_neg) = class_counts(labels);
    if n_pos == 0 || n_neg == 0 {
        return Err(EvalError::SingleClass);
    }
    let mut order: Vec<usize> = (0..preds.len()).collect();
    order.sort_by(|&a, &b| preds[a].total_cmp(&preds[b]));
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && preds[order[j + 1]] == preds[order[i]] {
            j += 1;
        }
        // Ranks i+1..=j+1 share their average.
        let avg = (i + j + 2) as f64 / 2.0;
        for &k in &order[i..=j] {
            if labels[k] == 1 {
                rank_sum_pos += avg;
            }
        }
        i = j + 1;
    }
    let u = rank_sum_pos - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Ok(u / (n_pos as f64 * n_neg as f64))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub fpr: f64,
    pub tpr: f64,
    /// Scores `>= threshold` are called positive; the first point uses +inf,
    /// written as `"inf"` in JSON.
    #[serde(with = "inf_as_string")]
    pub threshold: f64,
}

mod inf_as_string {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_infinite() && *v > 0.0 {
            s.serialize_str("inf")
        } else {
            s.serialize_f64(*v)
        }
    }

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Text(String),
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(v),
            Repr::Text(t) if t == "inf" => Ok(f64::INFINITY),
            Repr::Text(t) => Err(serde::de::Error::custom(format!("bad threshold {t}"))),
        }
    }
}

/// ROC points at every distinct score, descending, after a `+inf` sentinel
/// at `(0, 0)`. The last point is `(1, 1)`.
pub fn roc_curve(preds: &[f64], labels: &[u8]) -> Result<Vec<RocPoint>, EvalError> {
    check_lengths(preds, labels)?;
    let (n_pos, n_neg) = class_counts(labels);
    if n_pos == 0 || n_neg == 0 {
        return Err(EvalError::SingleClass);
    }
    let mut order: Vec<usize> = (0..preds.len()).collect();
    order.sort_by(|&a, &b| preds[b].total_cmp(&preds[a]));
    let mut points = vec![RocPoint { fpr: 0.0, tpr: 0.0, threshold: f64::INFINITY }];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < order.len() {
        let thr = preds[order[i]];
        while i < order.len() && preds[order[i]] == thr {
            if labels[order[i]] == 1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        points.push(RocPoint {
            fpr: fp as f64 / n_neg as f64,
            tpr: tp as f64 / n_pos as f64,
            threshold: thr,
        });
    }
    Ok(points)
}

/// Trapezoidal area under a ROC polyline.
pub fn trapezoid_area(points: &[RocPoint]) -> f64 {
    points
        .windows(2)
        .map(|w| (w[1].fpr - w[0].fpr) * (w[1].tpr + w[0].tpr) / 2.0)
        .sum()
}

/// Linear-interpolation percentile of sorted data, `q` in `[0, 1]`.
pub fn percentile(sorted: &[f64], q: f64) -> f64 {
    match sorted.len() {
        0 => f64::NAN,
        1 => sorted[0],
        n => {
            let pos = q.clamp(0.0, 1.0) * (n - 1) as f64;
            let lo = pos.floor() as usize;
            let hi = pos.ceil() as usize;
            let frac = pos - lo as f64;
            sorted[lo] + (sorted[hi] - sorted[lo]) * frac
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    /// Mean over bootstrap iterations.
    pub point: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub values: Vec<f64>,
}

impl MetricSummary {
    pub fn from_values(values: Vec<f64>) -> Self {
        let mut sorted = values.clone();
        sorted.sort_by(f64::total_cmp);
        let point = values.iter().sum::<f64>() / values.len() as f64;
        Self {
            point,
            ci_low: percentile(&sorted, 0.025),
            ci_high: percentile(&sorted, 0.975),
            values,
        }
    }

    pub fn contains_point(&self) -> bool {
        self.ci_low <= self.point && self.point <= self.ci_high
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BootstrapMode {
    /// Resample training patients and retrain each iteration.
    TrainResample,
    /// Train once and resample test windows.
    TestResample,
}

impl BootstrapMode {
    pub fn as_str(self) -> &'static str {
        match self {
            BootstrapMode::TrainResample => "train-resample",
            BootstrapMode::TestResample => "test-resample",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BootstrapConfig {
    pub n_boot: usize,
    pub mode: BootstrapMode,
    pub seed: u64,
    pub threshold: f64,
    pub max_redraws: usize,
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        Self {
            n_boot: 30,
            mode: BootstrapMode::TrainResample,
            seed: 7,
            threshold: 0.5,
            max_redraws: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub mode: BootstrapMode,
    pub n_boot: usize,
    pub threshold: f64,
    pub accuracy: MetricSummary,
    pub auroc: MetricSummary,
    /// ROC of the (iteration-averaged) predictions on the full test set.
    pub roc_points: Vec<RocPoint>,
    pub n_windows: usize,
    pub positive_rate: f64,
}

/// Draws `n` indices with replacement until the drawn labels contain both
/// classes.
fn two_class_resample(
    rng: &mut ChaCha8Rng,
    n: usize,
    is_positive: impl Fn(usize) -> Option<bool>,
    iteration: usize,
    max_redraws: usize,
) -> Result<Vec<usize>, EvalError> {
    for attempt in 0..max_redraws.max(1) {
        let idx: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
        let mut seen = [false, false];
        for &i in &idx {
            if let Some(p) = is_positive(i) {
                seen[usize::from(p)] = true;
            }
        }
        if seen[0] && seen[1] {
            return Ok(idx);
        }
        log::warn!("bootstrap iteration {iteration}: single-class resample, redrawing (attempt {})", attempt + 1);
    }
    Err(EvalError::ResampleExhausted { iteration, attempts: max_redraws })
}

/// Bootstrap over test windows for a fixed set of predictions.
pub fn bootstrap_test_resample(preds: &[f64], labels: &[u8], cfg: &BootstrapConfig) -> Result<EvalReport, EvalError> {
    check_lengths(preds, labels)?;
    let roc_points = roc_curve(preds, labels)?;
    let mut acc = Vec::with_capacity(cfg.n_boot);
    let mut auc = Vec::with_capacity(cfg.n_boot);
    for i in 0..cfg.n_boot {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(i as u64));
        let idx = two_class_resample(&mut rng, preds.len(), |k| Some(labels[k] == 1), i, cfg.max_redraws)?;
        let p: Vec<f64> = idx.iter().map(|&k| preds[k]).collect();
        let y: Vec<u8> = idx.iter().map(|&k| labels[k]).collect();
        acc.push(accuracy(&p, &y, cfg.threshold)?);
        auc.push(auroc(&p, &y)?);
    }
    Ok(EvalReport {
        mode: BootstrapMode::TestResample,
        n_boot: cfg.n_boot,
        threshold: cfg.threshold,
        accuracy: MetricSummary::from_values(acc),
        auroc: MetricSummary::from_values(auc),
        roc_points,
        n_windows: preds.len(),
        positive_rate: class_counts(labels).0 as f64 / labels.len() as f64,
    })
}

/// Inputs shared by both bootstrap modes: the patient split, train-split
/// statistics and tokenised windows.
#[derive(Debug, Clone)]
pub struct EvalData {
    pub stats: NormStats,
    /// Training windows grouped by patient.
    pub train_by_patient: Vec<Vec<WindowSample>>,
    pub test: Vec<WindowSample>,
}

impl EvalData {
    pub fn build(
        cohort: &[PatientRecord],
        catalog: &VariableCatalog,
        window: &WindowSpec,
        split: &SplitConfig,
    ) -> Result<Self, EvalError> {
        window.validate()?;
        let s = split_patients(cohort, split)?;
        let train_recs: Vec<&PatientRecord> = cohort.iter().filter(|r| s.is_train(&r.patient_id)).collect();
        let stats = compute_norm_stats(&train_recs, catalog, window)?;
        let train_by_patient = train_recs.iter().map(|r| patient_windows(r, &stats, window)).collect();
        let test = cohort
            .iter()
            .filter(|r| s.is_test(&r.patient_id))
            .flat_map(|r| patient_windows(r, &stats, window))
            .collect();
        Ok(Self { stats, train_by_patient, test })
    }

    pub fn test_labels(&self) -> Vec<u8> {
        self.test.iter().map(|s| s.label).collect()
    }
}

/// Bootstrap that resamples training patients with replacement and retrains
/// each iteration (model seed `seed + i`), scoring the fixed test windows.
pub fn bootstrap_train_resample(
    data: &EvalData,
    n_vars: usize,
    model_cfg: &ModelConfig,
    cfg: &BootstrapConfig,
) -> Result<EvalReport, EvalError> {
    let labels = data.test_labels();
    if labels.is_empty() {
        return Err(EvalError::Empty);
    }
    let (n_pos, n_neg) = class_counts(&labels);
    if n_pos == 0 || n_neg == 0 {
        return Err(EvalError::SingleClass);
    }
    let patient_class = |k: usize| {
        let w = &data.train_by_patient[k];
        if w.is_empty() {
            None
        } else {
            Some(w.iter().any(|s| s.label == 1))
        }
    };
    let n_train = data.train_by_patient.len();
    let mut acc = Vec::with_capacity(cfg.n_boot);
    let mut auc = Vec::with_capacity(cfg.n_boot);
    let mut mean_pred = vec![0.0; labels.len()];
    for i in 0..cfg.n_boot {
        let seed = cfg.seed.wrapping_add(i as u64);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let idx = two_class_resample(&mut rng, n_train, patient_class, i, cfg.max_redraws)?;
        let windows: Vec<WindowSample> = idx
            .iter()
            .flat_map(|&k| data.train_by_patient[k].iter().cloned())
            .collect();
        let (model, _) = train(&windows, n_vars, ModelConfig { seed, ..*model_cfg })?;
        let preds: Vec<f64> = model
            .predict_all(&data.test, model_cfg.threads)?
            .into_iter()
            .map(|p| p.risk)
            .collect();
        acc.push(accuracy(&preds, &labels, cfg.threshold)?);
        auc.push(auroc(&preds, &labels)?);
        log::info!("bootstrap {}/{}: accuracy {:.4}, auroc {:.4}", i + 1, cfg.n_boot, acc[i], auc[i]);
        for (m, p) in mean_pred.iter_mut().zip(&preds) {
            *m += p / cfg.n_boot as f64;
        }
    }
    Ok(EvalReport {
        mode: BootstrapMode::TrainResample,
        n_boot: cfg.n_boot,
        threshold: cfg.threshold,
        accuracy: MetricSummary::from_values(acc),
        auroc: MetricSummary::from_values(auc),
        roc_points: roc_curve(&mean_pred, &labels)?,
        n_windows: labels.len(),
        positive_rate: n_pos as f64 / labels.len() as f64,
    })
}

/// Runs the configured bootstrap. Test-resample scores `model`;
/// train-resample ignores it and retrains with `model_cfg`.
pub fn bootstrap_eval(
    data: &EvalData,
    model: &Forecaster,
    model_cfg: &ModelConfig,
    cfg: &BootstrapConfig,
) -> Result<EvalReport, EvalError> {
    match cfg.mode {
        BootstrapMode::TrainResample => bootstrap_train_resample(data, model.n_vars(), model_cfg, cfg),
        BootstrapMode::TestResample => {
            let preds: Vec<f64> = model
                .predict_all(&data.test, model_cfg.threads)?
                .into_iter()
                .map(|p| p.risk)
                .collect();
            bootstrap_test_resample(&preds, &data.test_labels(), cfg)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImportanceEntry {
    pub variable: String,
    pub category: Category,
    pub score: f64,
    /// 1 is most important.
    pub rank: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImportanceReport {
    /// In catalog order.
    pub entries: Vec<ImportanceEntry>,
    /// Variable names, most important first.
    pub ranking: Vec<String>,
    pub category_scores: BTreeMap<String, f64>,
    pub n_windows: usize,
}

impl ImportanceReport {
    pub fn rank_of(&self, variable: &str) -> Option<usize> {
        self.ranking.iter().position(|v| v == variable).map(|p| p + 1)
    }
}

/// Aggregates per-token weights: summed by variable within each window,
/// normalised per window, averaged over windows and renormalised.
pub fn importance_from_weights(
    windows: &[(Vec<VariableId>, Vec<f64>)],
    catalog: &VariableCatalog,
) -> Result<ImportanceReport, EvalError> {
    if windows.is_empty() {
        return Err(EvalError::Empty);
    }
    let n = catalog.len();
    let mut avg = vec![0.0; n];
    let mut used = 0usize;
    for (vars, weights) in windows {
        let mut per = vec![0.0; n];
        for (v, w) in vars.iter().zip(weights) {
            if let Some(slot) = per.get_mut(v.index()) {
                *slot += w;
            }
        }
        let total: f64 = per.iter().sum();
        if total > 0.0 {
            for (a, p) in avg.iter_mut().zip(&per) {
                *a += p / total;
            }
            used += 1;
        }
    }
    if used == 0 {
        return Err(EvalError::Empty);
    }
    let total: f64 = avg.iter().sum();
    let scores: Vec<f64> = avg.iter().map(|a| a / total).collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    let mut rank = vec![0; n];
    for (r, &i) in order.iter().enumerate() {
        rank[i] = r + 1;
    }
    let mut category_scores = BTreeMap::new();
    for c in [Category::Wearable, Category::Survey, Category::Event] {
        category_scores.insert(c.as_str().to_string(), 0.0);
    }
    let entries: Vec<ImportanceEntry> = catalog
        .entries
        .iter()
        .map(|e| {
            let i = e.id.index();
            *category_scores.get_mut(e.category.as_str()).expect("category") += scores[i];
            ImportanceEntry { variable: e.name.clone(), category: e.category, score: scores[i], rank: rank[i] }
        })
        .collect();
    Ok(ImportanceReport {
        ranking: order.iter().map(|&i| catalog.entries[i].name.clone()).collect(),
        entries,
        category_scores,
        n_windows: used,
    })
}

/// Fusion-attention importance over `samples`.
pub fn feature_importance(
    model: &Forecaster,
    samples: &[WindowSample],
    catalog: &VariableCatalog,
    threads: usize,
) -> Result<ImportanceReport, EvalError> {
    let preds = model.predict_all(samples, threads)?;
    let windows: Vec<(Vec<VariableId>, Vec<f64>)> = samples
        .iter()
        .zip(preds)
        .map(|(s, p)| (s.tokens.iter().map(|t| t.var).collect(), p.fusion_weights))
        .collect();
    importance_from_weights(&windows, catalog)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryPoint {
    pub cutoff_days: f64,
    pub risk: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Annotation {
    pub t_days: f64,
    pub kind: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskTrajectory {
    pub patient_id: String,
    pub points: Vec<TrajectoryPoint>,
    pub annotations: Vec<Annotation>,
}

/// Daily risk from `start + min_history` to the end of monitoring, with the
/// patient's clinical events as annotations. Cutoffs without any earlier
/// observation are skipped.
pub fn risk_trajectory(
    model: &Forecaster,
    rec: &PatientRecord,
    stats: &NormStats,
    spec: &WindowSpec,
    catalog: &VariableCatalog,
) -> Result<RiskTrajectory, EvalError> {
    if rec.span_days() < spec.min_history_days {
        return Err(EvalError::SpanTooShort { span: rec.span_days(), min_history: spec.min_history_days });
    }
    let first = rec.monitoring_start_days + spec.min_history_days;
    let mut points = Vec::new();
    let mut k = 0u64;
    loop {
        let cutoff = first + k as f64;
        if cutoff > rec.monitoring_end_days + 1e-9 {
            break;
        }
        let sample = crate::sampling::tokenize_window(rec, cutoff, stats, spec);
        if sample.tokens.is_empty() {
            log::warn!("{}: no observations before day {cutoff}; skipped", rec.patient_id);
        } else {
            points.push(TrajectoryPoint { cutoff_days: cutoff, risk: model.predict(&sample)?.risk });
        }
        k += 1;
    }

    let mut annotations: Vec<Annotation> = rec
        .adverse_events
        .iter()
        .map(|e| Annotation { t_days: e.t_days, kind: e.kind.as_str().to_string() })
        .collect();
    for o in &rec.observations {
        let Some(entry) = catalog.get(o.variable) else { continue };
        if entry.category != Category::Event {
            continue;
        }
        let explained = rec
            .adverse_events
            .iter()
            .any(|e| e.t_days == o.t_days && e.kind.input_variable() == Some(entry.name.as_str()));
        if !explained {
            annotations.push(Annotation { t_days: o.t_days, kind: entry.name.clone() });
        }
    }
    annotations.sort_by(|a, b| a.t_days.total_cmp(&b.t_days).then_with(|| a.kind.cmp(&b.kind)));
    Ok(RiskTrajectory { patient_id: rec.patient_id.clone(), points, annotations })
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> EvalError + '_ {
    move |source| EvalError::Io { path: path.display().to_string(), source }
}

fn write_csv<R: Serialize>(path: &Path, rows: impl IntoIterator<Item = R>, header_only: &[&str]) -> Result<(), EvalError> {
    let file = File::create(path).map_err(io_err(path))?;
    let mut w = csv::Writer::from_writer(BufWriter::new(file));
    let mut any = false;
    for r in rows {
        w.serialize(r).map_err(|e| EvalError::Io { path: path.display().to_string(), source: e.into() })?;
        any = true;
    }
    if !any {
        w.write_record(header_only).map_err(|e| EvalError::Io { path: path.display().to_string(), source: e.into() })?;
    }
    w.flush().map_err(io_err(path))
}

/// `fpr,tpr,threshold`; the sentinel threshold is written as `inf`.
pub fn write_roc_csv(points: &[RocPoint], path: &Path) -> Result<(), EvalError> {
    write_csv(path, points.iter(), &["fpr", "tpr", "threshold"])
}

#[derive(Serialize)]
struct ImportanceRow<'a> {
    variable: &'a str,
    category: &'a str,
    score: f64,
    rank: usize,
}

/// `variable,category,score,rank`, most important first.
pub fn write_importance_csv(report: &ImportanceReport, path: &Path) -> Result<(), EvalError> {
    let mut rows: Vec<&ImportanceEntry> = report.entries.iter().collect();
    rows.sort_by_key(|e| e.rank);
    write_csv(
        path,
        rows.into_iter().map(|e| ImportanceRow {
            variable: &e.variable,
            category: e.category.as_str(),
            score: e.score,
            rank: e.rank,
        }),
        &["variable", "category", "score", "rank"],
    )
}

/// Writes `trajectory_<patient>.csv` and `events_<patient>.csv` into `dir`.
pub fn write_trajectory_csvs(traj: &RiskTrajectory, dir: &Path) -> Result<(), EvalError> {
    write_csv(
        &dir.join(format!("trajectory_{}.csv", traj.patient_id)),
        traj.points.iter(),
        &["cutoff_days", "risk"],
    )?;
    write_csv(
        &dir.join(format!("events_{}.csv", traj.patient_id)),
        traj.annotations.iter(),
        &["t_days", "kind"],
    )
}

/// Pretty JSON with a trailing newline.
pub fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<(), EvalError> {
    let file = File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    serde_json::to_writer_pretty(&mut w, value)
        .map_err(|e| EvalError::Io { path: path.display().to_string(), source: e.into() })?;
    w.write_all(b"\n").map_err(io_err(path))?;
    w.flush().map_err(io_err(path))
}
