//! Synthetic cohorts with a known hazard.
//!
//! Each patient has one latent health value per day: a persistent frailty
//! offset, a mean-reverting noise term and negative shocks after each
//! treatment that fade with a recovery time constant. Adverse events are
//! daily Bernoulli draws from `logistic(alpha + beta * max(0, -h))`. Every
//! modality is a noisy view of `h`, and sicker patients wear the device and
//! answer surveys less often.

use std::f64::consts::PI;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{
    qor15_item_name, AdverseEvent, AdverseEventKind, Gender, Observation, PatientRecord, StaticProfile, VariableCatalog,
    COMPLICATION_SERIOUSNESS, QOR15_TOTAL, TREATMENT_VARIABLES, WELLNESS_CHECKIN,
};
use crate::eval::{auroc, EvalError};
use crate::ingest::{assemble_record, EventLine, IngestConfig, IngestError, PatientStreams, RawSensorEpoch, SensorKind, EPOCHS_PER_DAY};
use crate::sampling::WindowSample;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid synth config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error("no ground truth for patient {0}")]
    UnknownPatient(String),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HealthParams {
    /// Standard deviation of the per-patient frailty offset.
    pub frailty_sd: f64,
    /// Fraction of the noise term removed each day.
    pub reversion: f64,
    pub noise_sd: f64,
    /// Health drop right after a treatment, by treatment variable order
    /// (chemotherapy, hormone, immuno, mixed).
    pub shock: [f64; 4],
    /// Exponential recovery time constant after a shock.
    pub recovery_days: f64,
}

impl Default for HealthParams {
    fn default() -> Self {
        Self {
            frailty_sd: 0.8,
            reversion: 0.1,
            noise_sd: 0.15,
            shock: [0.5, 0.2, 0.3, 0.4],
            recovery_days: 6.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HazardParams {
    pub alpha: f64,
    pub beta: f64,
    /// Relative frequency of each kind, in `AdverseEventKind::ALL` order.
    pub kind_weights: [f64; 5],
}

impl Default for HazardParams {
    fn default() -> Self {
        Self {
            alpha: -8.3,
            beta: 3.5,
            kind_weights: [0.20, 0.17, 0.12, 0.48, 0.03],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WearableParams {
    /// Logit of wearing the device on a day at `h = 0`.
    pub wear_logit: f64,
    /// Increase of the wear logit per unit of health.
    pub wear_mnar_slope: f64,
    /// Mean fraction of the day worn on worn days.
    pub worn_fraction: f64,
    pub hr_base_mean: f64,
    pub hr_base_sd: f64,
    /// Heart-rate increase per unit of poor health.
    pub hr_slope: f64,
    pub hr_noise_sd: f64,
    pub steps_daily_mean: f64,
    /// Relative step-count reduction per unit of poor health.
    pub steps_slope: f64,
    /// Per-epoch probability of a heart-rate sensor artefact.
    pub artifact_rate: f64,
}

impl Default for WearableParams {
    fn default() -> Self {
        Self {
            wear_logit: 2.0,
            wear_mnar_slope: 0.8,
            worn_fraction: 0.6,
            hr_base_mean: 72.0,
            hr_base_sd: 5.0,
            hr_slope: 10.0,
            hr_noise_sd: 5.0,
            steps_daily_mean: 6000.0,
            steps_slope: 0.25,
            artifact_rate: 1e-4,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SurveyParams {
    pub qor_response_logit: f64,
    pub wellness_response_logit: f64,
    /// Increase of both response logits per unit of health.
    pub survey_mnar_slope: f64,
    /// QoR-15 item score change per unit of health.
    pub qor_loading: f64,
    pub qor_item_noise_sd: f64,
    /// Slope of the "feeling well" logit on health.
    pub wellness_slope: f64,
    /// Daily probability of reporting a complication while `h < -1.5`.
    pub complication_rate: f64,
}

impl Default for SurveyParams {
    fn default() -> Self {
        Self {
            qor_response_logit: -0.5,
            wellness_response_logit: 0.5,
            survey_mnar_slope: 0.8,
            qor_loading: 1.2,
            qor_item_noise_sd: 1.2,
            wellness_slope: 1.5,
            complication_rate: 0.3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub n_patients: usize,
    pub seed: u64,
    pub span_median_days: f64,
    /// Log-scale spread of the span distribution, truncated to the bounds.
    pub span_sigma: f64,
    pub span_min_days: f64,
    pub span_max_days: f64,
    pub treatment_cycle_days: f64,
    /// Delay applied to the next treatment after a dose reduction or delay.
    pub dose_delay_days: f64,
    /// Daily rate of routine GP visits unrelated to treatment.
    pub background_gp_rate: f64,
    pub health: HealthParams,
    pub hazard: HazardParams,
    pub wearable: WearableParams,
    pub survey: SurveyParams,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_patients: 50,
            seed: 7,
            span_median_days: 76.0,
            span_sigma: 0.55,
            span_min_days: 42.0,
            span_max_days: 298.0,
            treatment_cycle_days: 21.0,
            dose_delay_days: 7.0,
            background_gp_rate: 0.01,
            health: HealthParams::default(),
            hazard: HazardParams::default(),
            wearable: WearableParams::default(),
            survey: SurveyParams::default(),
        }
    }
}

impl SynthConfig {
    /// Hazard independent of health, with the intercept chosen to keep a
    /// similar share of positive windows.
    pub fn null_signal() -> Self {
        let mut c = Self::default();
        c.hazard.beta = 0.0;
        c.hazard.alpha = -5.3;
        c
    }

    /// Only the heart-rate stream reflects health: other modalities, missingness
    /// and treatment shocks are decoupled from it.
    pub fn planted_heart_rate() -> Self {
        let mut c = Self::default();
        c.health.shock = [0.0; 4];
        c.hazard.alpha = -8.0;
        c.wearable.wear_mnar_slope = 0.0;
        c.wearable.steps_slope = 0.0;
        c.wearable.hr_base_sd = 2.0;
        c.wearable.hr_slope = 15.0;
        c.survey.survey_mnar_slope = 0.0;
        c.survey.qor_loading = 0.0;
        c.survey.wellness_slope = 0.0;
        c.survey.complication_rate = 0.0;
        c
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: &str| Err(SynthError::InvalidConfig(m.to_string()));
        if self.n_patients == 0 {
            return bad("n_patients must be positive");
        }
        if !(self.span_min_days >= 1.0 && self.span_min_days <= self.span_median_days && self.span_median_days <= self.span_max_days) {
            return bad("span bounds must satisfy 1 <= min <= median <= max");
        }
        let h = &self.health;
        let positive = [
            self.span_sigma,
            self.treatment_cycle_days,
            h.frailty_sd,
            h.reversion,
            h.noise_sd,
            h.recovery_days,
            self.wearable.hr_noise_sd,
            self.wearable.worn_fraction,
            self.wearable.steps_daily_mean,
            self.survey.qor_item_noise_sd,
        ];
        if positive.iter().any(|v| !(v.is_finite() && *v > 0.0)) || h.reversion > 1.0 {
            return bad("rates and standard deviations must be positive (reversion at most 1)");
        }
        let rates = [self.wearable.artifact_rate, self.survey.complication_rate, self.background_gp_rate];
        if rates.iter().any(|r| !(0.0..=1.0).contains(r)) {
            return bad("probabilities must lie in [0, 1]");
        }
        if self.hazard.kind_weights.iter().any(|w| *w < 0.0) || self.hazard.kind_weights.iter().sum::<f64>() <= 0.0 {
            return bad("kind weights must be non-negative with a positive sum");
        }
        if h.shock.iter().any(|s| *s < 0.0) || self.dose_delay_days < 0.0 {
            return bad("shocks and delays must be non-negative");
        }
        Ok(())
    }
}

fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Generator-side truth for one patient, indexed by day from 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatientTruth {
    pub patient_id: String,
    pub health: Vec<f64>,
    pub hazard: Vec<f64>,
    pub events: Vec<AdverseEvent>,
}

impl PatientTruth {
    /// Probability of at least one event on days `c .. c + horizon`, i.e. in
    /// `(c, c + horizon]` for an integer cutoff.
    pub fn window_risk(&self, cutoff: f64, horizon: f64) -> f64 {
        let first = cutoff.ceil().max(0.0) as usize;
        let last = (cutoff + horizon).floor().max(0.0) as usize;
        let survive: f64 = (first..last.min(self.hazard.len()))
            .map(|d| 1.0 - self.hazard[d])
            .product();
        1.0 - survive
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub patients: Vec<PatientTruth>,
}

impl GroundTruth {
    pub fn get(&self, patient_id: &str) -> Option<&PatientTruth> {
        self.patients.iter().find(|p| p.patient_id == patient_id)
    }
}

/// AUROC of the true window risk against the windows' labels.
pub fn oracle_auroc(truth: &GroundTruth, windows: &[WindowSample], horizon: f64) -> Result<f64, SynthError> {
    let mut scores = Vec::with_capacity(windows.len());
    for w in windows {
        let p = truth
            .get(&w.patient_id)
            .ok_or_else(|| SynthError::UnknownPatient(w.patient_id.clone()))?;
        scores.push(p.window_risk(w.cutoff_days, horizon));
    }
    let labels: Vec<u8> = windows.iter().map(|w| w.label).collect();
    Ok(auroc(&scores, &labels)?)
}

pub fn patient_id(index: usize) -> String {
    format!("P{:04}", index + 1)
}

fn patient_seed(seed: u64, index: usize) -> u64 {
    let mut z = seed.wrapping_add((index as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn draw_kind(rng: &mut ChaCha8Rng, weights: &[f64; 5], allow_death: bool) -> AdverseEventKind {
    let w: Vec<f64> = AdverseEventKind::ALL
        .iter()
        .zip(weights)
        .map(|(k, w)| if *k == AdverseEventKind::Death && !allow_death { 0.0 } else { *w })
        .collect();
    let total: f64 = w.iter().sum();
    let mut u = rng.random::<f64>() * total;
    for (k, wk) in AdverseEventKind::ALL.iter().zip(&w) {
        if u < *wk {
            return *k;
        }
        u -= wk;
    }
    AdverseEventKind::DoseReductionDelay
}

/// Raw streams of one patient as a site would export them, plus the truth.
pub fn generate_patient(cfg: &SynthConfig, catalog: &VariableCatalog, index: usize) -> (PatientStreams, PatientTruth) {
    let pid = patient_id(index);
    let mut rng = ChaCha8Rng::seed_from_u64(patient_seed(cfg.seed, index));
    let std_normal = Normal::new(0.0, 1.0).expect("unit normal");
    let gauss = move |rng: &mut ChaCha8Rng| -> f64 { std_normal.sample(rng) };

    let span_dist = LogNormal::new(cfg.span_median_days.ln(), cfg.span_sigma).expect("span distribution");
    let span = loop {
        let s = span_dist.sample(&mut rng).round();
        if s >= cfg.span_min_days && s <= cfg.span_max_days {
            break s;
        }
    };
    let age = (62.0 + 11.0 * gauss(&mut rng)).clamp(18.0, 95.0);
    let gender = if rng.random::<bool>() { Gender::Female } else { Gender::Male };
    let bmi = (26.0 + 4.5 * gauss(&mut rng)).clamp(15.0, 50.0);
    let static_profile = StaticProfile { age, gender, bmi };

    let h = cfg.health;
    let frailty = h.frailty_sd * gauss(&mut rng);
    let stationary_sd = h.noise_sd / (1.0 - (1.0 - h.reversion).powi(2)).sqrt();
    let mut noise = stationary_sd * gauss(&mut rng);
    let treatment = rng.random_range(0..TREATMENT_VARIABLES.len());
    let mut next_treatment = rng.random_range(0..cfg.treatment_cycle_days as usize) as f64;
    let hr_base = cfg.wearable.hr_base_mean + cfg.wearable.hr_base_sd * gauss(&mut rng);
    let steps_base = cfg.wearable.steps_daily_mean * (0.25 * gauss(&mut rng)).exp();

    let mut end = span;
    let mut health = Vec::new();
    let mut hazard = Vec::new();
    let mut events: Vec<AdverseEvent> = Vec::new();
    let mut lines: Vec<EventLine> = Vec::new();
    let mut epochs: Vec<RawSensorEpoch> = Vec::new();
    let mut observations: Vec<Observation> = Vec::new();
    let mut shock = 0.0;
    let decay = (-1.0 / h.recovery_days).exp();
    let w = cfg.wearable;
    let sv = cfg.survey;

    let mut day = 0usize;
    while (day as f64) < end {
        let d = day as f64;
        let obs = |variable: &str, t: f64, value: f64| Observation {
            patient_id: pid.clone(),
            t_days: t,
            variable: catalog.expect_id(variable),
            value,
        };
        if day > 0 {
            noise = (1.0 - h.reversion) * noise + h.noise_sd * gauss(&mut rng);
            shock *= decay;
        }
        if d >= next_treatment {
            let t = d + rng.random_range(0.3..0.6);
            lines.push(EventLine { patient_id: pid.clone(), t_days: t, kind: TREATMENT_VARIABLES[treatment].to_string() });
            shock += h.shock[treatment];
            next_treatment += cfg.treatment_cycle_days;
        }
        let hv = frailty + noise - shock;
        let sick = (-hv).max(0.0);
        let p = logistic(cfg.hazard.alpha + cfg.hazard.beta * sick);
        health.push(hv);
        hazard.push(p);

        // Wearable epochs.
        if rng.random::<f64>() < logistic(w.wear_logit + w.wear_mnar_slope * hv) {
            let frac = (w.worn_fraction + 0.08 * hv + 0.1 * gauss(&mut rng)).clamp(0.15, 0.95);
            let len = (frac * EPOCHS_PER_DAY as f64).round() as usize;
            let start = rng.random_range(0..=EPOCHS_PER_DAY - len);
            let steps_per_slot = steps_base * (1.0 - w.steps_slope * sick).max(0.1) / 192.0;
            for slot in start..start + len {
                let t = d + slot as f64 / EPOCHS_PER_DAY as f64;
                let circadian = 8.0 * (2.0 * PI * slot as f64 / EPOCHS_PER_DAY as f64 - PI / 2.0).sin();
                let mut hr = hr_base + circadian + w.hr_slope * sick + w.hr_noise_sd * gauss(&mut rng);
                if rng.random::<f64>() < w.artifact_rate {
                    hr = if rng.random::<bool>() { 250.0 } else { 20.0 };
                }
                epochs.push(RawSensorEpoch { patient_id: pid.clone(), t_days: t, kind: SensorKind::HeartRate, value: hr.round() });
                let awake = (84..276).contains(&slot);
                if awake {
                    let s = (steps_per_slot * (1.0 + 0.5 * gauss(&mut rng))).round();
                    if s > 0.0 {
                        epochs.push(RawSensorEpoch { patient_id: pid.clone(), t_days: t, kind: SensorKind::Steps, value: s });
                    }
                }
            }
        }

        // Surveys.
        if rng.random::<f64>() < logistic(sv.qor_response_logit + sv.survey_mnar_slope * hv) {
            let t = d + rng.random_range(0.4..0.9);
            let mut total = 0.0;
            for item in 1..=15 {
                let v = (7.0 + sv.qor_loading * hv + sv.qor_item_noise_sd * gauss(&mut rng)).round().clamp(0.0, 10.0);
                total += v;
                observations.push(obs(&qor15_item_name(item), t, v));
            }
            observations.push(obs(QOR15_TOTAL, t, total));
        }
        if rng.random::<f64>() < logistic(sv.wellness_response_logit + sv.survey_mnar_slope * hv) {
            let t = d + rng.random_range(0.3..0.9);
            let well = rng.random::<f64>() < logistic(1.0 + sv.wellness_slope * hv);
            observations.push(obs(WELLNESS_CHECKIN, t, if well { 1.0 } else { 0.0 }));
        }
        if hv < -1.5 && rng.random::<f64>() < sv.complication_rate {
            let t = d + rng.random_range(0.3..0.9);
            observations.push(obs(COMPLICATION_SERIOUSNESS, t, (-hv - 1.0).round().clamp(1.0, 3.0)));
        }
        if rng.random::<f64>() < cfg.background_gp_rate {
            lines.push(EventLine { patient_id: pid.clone(), t_days: d + rng.random_range(0.3..0.7), kind: "gp_visit".into() });
        }

        // Adverse event for this day.
        if rng.random::<f64>() < p {
            let t = d + rng.random_range(0.05..0.95);
            let kind = draw_kind(&mut rng, &cfg.hazard.kind_weights, t >= cfg.span_min_days);
            events.push(AdverseEvent { t_days: t, kind });
            lines.push(EventLine { patient_id: pid.clone(), t_days: t, kind: kind.as_str().to_string() });
            match kind {
                AdverseEventKind::DoseReductionDelay => next_treatment += cfg.dose_delay_days,
                AdverseEventKind::Death => {
                    end = t;
                    epochs.retain(|e| e.t_days <= t);
                    observations.retain(|o| o.t_days <= t);
                    lines.retain(|l| l.t_days <= t);
                }
                _ => {}
            }
        }
        day += 1;
    }

    let streams = PatientStreams {
        patient_id: pid.clone(),
        static_profile,
        monitoring_start_days: 0.0,
        monitoring_end_days: end,
        epochs,
        observations,
        events: lines,
    };
    let truth = PatientTruth { patient_id: pid, health, hazard, events };
    (streams, truth)
}

/// Raw streams and truth for `cfg.n_patients` patients, in id order.
pub fn generate_streams(cfg: &SynthConfig, catalog: &VariableCatalog) -> Result<(Vec<PatientStreams>, GroundTruth), SynthError> {
    cfg.validate()?;
    let out: Vec<(PatientStreams, PatientTruth)> = (0..cfg.n_patients)
        .into_par_iter()
        .map(|i| generate_patient(cfg, catalog, i))
        .collect();
    let (streams, patients) = out.into_iter().unzip();
    Ok((streams, GroundTruth { patients }))
}

/// Generates `cfg.n_patients` patients and runs them through record assembly
/// (daily aggregation of the raw epochs).
pub fn generate_cohort(cfg: &SynthConfig, catalog: &VariableCatalog) -> Result<(Vec<PatientRecord>, GroundTruth), SynthError> {
    let (streams, truth) = generate_streams(cfg, catalog)?;
    let ingest_cfg = IngestConfig::default();
    let records = streams
        .into_par_iter()
        .map(|s| assemble_record(s, true, catalog, &ingest_cfg).map(|(rec, _)| rec))
        .collect::<Result<Vec<_>, _>>()?;
    Ok((records, truth))
}

/// One [`PatientTruth`] per line.
pub fn write_ground_truth(truth: &GroundTruth, path: &Path) -> Result<(), SynthError> {
    let io = |e: std::io::Error| SynthError::Io { path: path.display().to_string(), source: e };
    let mut out = BufWriter::new(File::create(path).map_err(io)?);
    for p in &truth.patients {
        serde_json::to_writer(&mut out, p).map_err(|e| io(e.into()))?;
        out.write_all(b"\n").map_err(io)?;
    }
    out.flush().map_err(io)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{catalog_default, validate_record, DAILY_WEAR_PCT};
    use crate::sampling::{build_dataset, SplitConfig, WindowSpec};

    fn small(n: usize, seed: u64) -> SynthConfig {
        SynthConfig { n_patients: n, seed, ..Default::default() }
    }

    #[test]
    fn deterministic_and_valid() {
        let c = catalog_default();
        let (a, ta) = generate_cohort(&small(6, 3), &c).unwrap();
        let (b, tb) = generate_cohort(&small(6, 3), &c).unwrap();
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
        assert_eq!(ta, tb);
        for r in &a {
            assert!(validate_record(r, &c).is_empty());
            assert!(r.span_days() >= 42.0 && r.span_days() <= 298.0);
            assert!(r.observations.iter().all(|o| o.t_days <= r.monitoring_end_days));
        }
    }

    #[test]
    fn streams_have_three_native_rates() {
        let (streams, _) = generate_patient(&small(1, 1), &catalog_default(), 0);
        let gaps: Vec<f64> = streams
            .epochs
            .windows(2)
            .filter(|w| w[0].kind == SensorKind::HeartRate && w[1].kind == SensorKind::HeartRate)
            .map(|w| w[1].t_days - w[0].t_days)
            .collect();
        assert!(gaps.iter().any(|g| (g - 1.0 / 288.0).abs() < 1e-9));
        let survey_days: std::collections::BTreeSet<i64> =
            streams.observations.iter().map(|o| o.t_days.floor() as i64).collect();
        assert!(survey_days.len() > 5);
        assert!(streams.observations.iter().all(|o| o.t_days.fract() > 0.0));
        assert!(!streams.events.is_empty());
        let treatment_gaps: Vec<f64> = streams
            .events
            .iter()
            .filter(|e| TREATMENT_VARIABLES.contains(&e.kind.as_str()))
            .map(|e| e.t_days)
            .collect::<Vec<_>>()
            .windows(2)
            .map(|w| w[1] - w[0])
            .collect();
        assert!(treatment_gaps.iter().all(|g| *g > 20.0));
    }

    #[test]
    fn window_risk_matches_product_formula() {
        let t = PatientTruth {
            patient_id: "x".into(),
            health: vec![0.0; 5],
            hazard: vec![0.1, 0.2, 0.3, 0.4, 0.5],
            events: vec![],
        };
        // Days 1 and 2 cover (1, 3].
        assert!((t.window_risk(1.0, 2.0) - (1.0 - 0.8 * 0.7)).abs() < 1e-15);
    }

    #[test]
    fn null_oracle_is_uninformative() {
        let c = catalog_default();
        let (cohort, truth) = generate_cohort(&SynthConfig { n_patients: 20, ..SynthConfig::null_signal() }, &c).unwrap();
        let ds = build_dataset(&cohort, &WindowSpec::default(), &SplitConfig { train_ratio: 1.0, seed: 1 }, &c).unwrap();
        let a = oracle_auroc(&truth, &ds.train, 28.0).unwrap();
        assert_eq!(a, 0.5);
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let mut c = SynthConfig::default();
        c.health.noise_sd = 0.0;
        assert!(c.validate().is_err());
        let c = SynthConfig { span_min_days: 100.0, ..Default::default() };
        assert!(c.validate().is_err());
        let c = SynthConfig { n_patients: 0, ..Default::default() };
        assert!(c.validate().is_err());
    }

    #[test]
    fn wear_is_lower_before_events() {
        let c = catalog_default();
        let (cohort, _) = generate_cohort(&small(50, 7), &c).unwrap();
        let wear = c.expect_id(DAILY_WEAR_PCT);
        let mut all = (0.0, 0usize);
        let mut before = (0.0, 0usize);
        for r in &cohort {
            for o in r.observations.iter().filter(|o| o.variable == wear) {
                all.0 += o.value;
                all.1 += 1;
                if r.adverse_events.iter().any(|e| o.t_days <= e.t_days && e.t_days - o.t_days <= 7.0) {
                    before.0 += o.value;
                    before.1 += 1;
                }
            }
        }
        assert!(before.1 > 0);
        assert!(before.0 / before.1 as f64 + 1.0 < all.0 / all.1 as f64);
        assert!(cohort.iter().all(|r| r.observations.iter().all(|o| c.get(o.variable).is_some())));
    }
}
