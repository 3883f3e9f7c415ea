//! Shared vocabulary: the variable catalog, patient records and the
//! adverse-event taxonomy.

use std::fmt;

use serde::{Deserialize, Serialize};

/// Dense index into a [`VariableCatalog`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct VariableId(pub u16);

impl VariableId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Category {
    Wearable,
    Survey,
    Event,
}

impl Category {
    pub fn as_str(self) -> &'static str {
        match self {
            Category::Wearable => "wearable",
            Category::Survey => "survey",
            Category::Event => "event",
        }
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ValueKind {
    Continuous,
    Binary,
    Ordinal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CatalogEntry {
    pub id: VariableId,
    pub name: String,
    pub category: Category,
    pub value_kind: ValueKind,
}

/// Ordered list of the time-varying variables the forecaster consumes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariableCatalog {
    pub entries: Vec<CatalogEntry>,
}

pub const DAILY_MAX_HR: &str = "daily_max_hr";
pub const DAILY_TOTAL_STEPS: &str = "daily_total_steps";
pub const DAILY_WEAR_PCT: &str = "daily_wear_pct";
pub const CONTINUOUS_ABSENCE_DURATION: &str = "continuous_absence_duration";
pub const QOR15_TOTAL: &str = "qor15_total";
pub const COMPLICATION_SERIOUSNESS: &str = "complication_seriousness";
pub const WELLNESS_CHECKIN: &str = "wellness_checkin";

/// Treatment variables; at least one must occur for a patient to count as treated.
pub const TREATMENT_VARIABLES: [&str; 4] =
    ["chemotherapy", "hormone_therapy", "immunotherapy", "mixed_therapy"];

const EVENT_VARIABLES: [&str; 8] = [
    "chemotherapy",
    "hormone_therapy",
    "immunotherapy",
    "mixed_therapy",
    "readmission",
    "gp_visit",
    "ae_visit",
    "dose_reduction_delay",
];

/// Name of the i-th QoR-15 item variable (1-based).
pub fn qor15_item_name(item: usize) -> String {
    format!("qor15_item_{item}")
}

/// The 30-variable catalog: 4 wearable, 18 survey and 8 event variables.
pub fn catalog_default() -> VariableCatalog {
    let mut specs: Vec<(String, Category, ValueKind)> = vec![
        (DAILY_MAX_HR.into(), Category::Wearable, ValueKind::Continuous),
        (DAILY_TOTAL_STEPS.into(), Category::Wearable, ValueKind::Continuous),
        (DAILY_WEAR_PCT.into(), Category::Wearable, ValueKind::Continuous),
        (CONTINUOUS_ABSENCE_DURATION.into(), Category::Wearable, ValueKind::Continuous),
        (QOR15_TOTAL.into(), Category::Survey, ValueKind::Ordinal),
    ];
    for item in 1..=15 {
        specs.push((qor15_item_name(item), Category::Survey, ValueKind::Ordinal));
    }
    specs.push((COMPLICATION_SERIOUSNESS.into(), Category::Survey, ValueKind::Ordinal));
    specs.push((WELLNESS_CHECKIN.into(), Category::Survey, ValueKind::Binary));
    for name in EVENT_VARIABLES {
        specs.push((name.into(), Category::Event, ValueKind::Binary));
    }
    let entries = specs
        .into_iter()
        .enumerate()
        .map(|(i, (name, category, value_kind))| CatalogEntry {
            id: VariableId(i as u16),
            name,
            category,
            value_kind,
        })
        .collect();
    VariableCatalog { entries }
}

impl VariableCatalog {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, id: VariableId) -> Option<&CatalogEntry> {
        self.entries.get(id.index())
    }

    pub fn id_of(&self, name: &str) -> Option<VariableId> {
        self.entries.iter().find(|e| e.name == name).map(|e| e.id)
    }

    /// Like [`id_of`](Self::id_of) for names that are part of the default catalog.
    ///
    /// Panics when the name is missing; only use with the constants of this module.
    pub fn expect_id(&self, name: &str) -> VariableId {
        self.id_of(name)
            .unwrap_or_else(|| panic!("variable {name} missing from catalog"))
    }

    pub fn name(&self, id: VariableId) -> &str {
        self.get(id).map(|e| e.name.as_str()).unwrap_or("<unknown>")
    }

    pub fn contains(&self, id: VariableId) -> bool {
        id.index() < self.entries.len()
    }

    pub fn count(&self, category: Category) -> usize {
        self.entries.iter().filter(|e| e.category == category).count()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub patient_id: String,
    pub t_days: f64,
    pub variable: VariableId,
    pub value: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Gender {
    #[serde(rename = "F")]
    Female,
    #[serde(rename = "M")]
    Male,
}

impl Gender {
    pub fn encode(self) -> f64 {
        match self {
            Gender::Female => 0.0,
            Gender::Male => 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StaticProfile {
    pub age: f64,
    pub gender: Gender,
    pub bmi: f64,
}

impl StaticProfile {
    /// Raw static inputs in model order: age, gender (0/1), bmi.
    pub fn as_array(&self) -> [f64; 3] {
        [self.age, self.gender.encode(), self.bmi]
    }
}

/// Label-eligible outcomes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdverseEventKind {
    GpVisitTreatmentRelated,
    AeVisit,
    Readmission,
    DoseReductionDelay,
    Death,
}

impl AdverseEventKind {
    pub const ALL: [AdverseEventKind; 5] = [
        AdverseEventKind::GpVisitTreatmentRelated,
        AdverseEventKind::AeVisit,
        AdverseEventKind::Readmission,
        AdverseEventKind::DoseReductionDelay,
        AdverseEventKind::Death,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            AdverseEventKind::GpVisitTreatmentRelated => "gp_visit_treatment_related",
            AdverseEventKind::AeVisit => "ae_visit",
            AdverseEventKind::Readmission => "readmission",
            AdverseEventKind::DoseReductionDelay => "dose_reduction_delay",
            AdverseEventKind::Death => "death",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.as_str() == s)
    }

    /// Input-side event variable recorded alongside this outcome. Death has none.
    pub fn input_variable(self) -> Option<&'static str> {
        match self {
            AdverseEventKind::GpVisitTreatmentRelated => Some("gp_visit"),
            AdverseEventKind::AeVisit => Some("ae_visit"),
            AdverseEventKind::Readmission => Some("readmission"),
            AdverseEventKind::DoseReductionDelay => Some("dose_reduction_delay"),
            AdverseEventKind::Death => None,
        }
    }
}

impl fmt::Display for AdverseEventKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdverseEvent {
    pub t_days: f64,
    pub kind: AdverseEventKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatientRecord {
    pub patient_id: String,
    #[serde(rename = "static")]
    pub static_profile: StaticProfile,
    pub observations: Vec<Observation>,
    pub adverse_events: Vec<AdverseEvent>,
    pub monitoring_start_days: f64,
    pub monitoring_end_days: f64,
}

impl PatientRecord {
    pub fn span_days(&self) -> f64 {
        self.monitoring_end_days - self.monitoring_start_days
    }

    pub fn has_adverse_event(&self) -> bool {
        !self.adverse_events.is_empty()
    }

    /// Sorts observations by `(t_days, variable)` and events by time.
    pub fn sort_streams(&mut self) {
        self.observations
            .sort_by(|a, b| a.t_days.total_cmp(&b.t_days).then(a.variable.cmp(&b.variable)));
        self.adverse_events.sort_by(|a, b| a.t_days.total_cmp(&b.t_days));
    }
}

/// One broken invariant found by [`validate_record`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub field: String,
    pub rule: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.field, self.rule)
    }
}

fn violation(field: impl Into<String>, rule: &str) -> Violation {
    Violation {
        field: field.into(),
        rule: rule.to_string(),
    }
}

/// Checks every record invariant against `catalog`. An empty list means the
/// record is well formed.
pub fn validate_record(rec: &PatientRecord, catalog: &VariableCatalog) -> Vec<Violation> {
    let mut out = Vec::new();
    let s = &rec.static_profile;
    if !(s.age > 0.0 && s.age < 120.0) {
        out.push(violation("static.age", "age in (0, 120)"));
    }
    if !(s.bmi > 5.0 && s.bmi < 100.0) {
        out.push(violation("static.bmi", "bmi in (5, 100)"));
    }
    let (start, end) = (rec.monitoring_start_days, rec.monitoring_end_days);
    if !start.is_finite() || !end.is_finite() || start > end {
        out.push(violation("monitoring", "monitoring_start_days <= monitoring_end_days"));
    }

    let wellness = catalog.id_of(WELLNESS_CHECKIN);
    let mut time_rule_hit = false;
    let mut range_rule_hit = false;
    let mut value_rule_hit = false;
    let mut catalog_rule_hit = false;
    let mut sorted = true;
    for (i, o) in rec.observations.iter().enumerate() {
        if (!o.t_days.is_finite() || o.t_days < 0.0) && !time_rule_hit {
            out.push(violation(format!("observations[{i}].t_days"), "t_days ≥ 0"));
            time_rule_hit = true;
        }
        if o.t_days >= 0.0 && (o.t_days < start || o.t_days > end) && !range_rule_hit {
            out.push(violation(
                format!("observations[{i}].t_days"),
                "within monitoring span",
            ));
            range_rule_hit = true;
        }
        if !o.value.is_finite() && !value_rule_hit {
            out.push(violation(format!("observations[{i}].value"), "value finite"));
            value_rule_hit = true;
        }
        match catalog.get(o.variable) {
            None => {
                if !catalog_rule_hit {
                    out.push(violation(
                        format!("observations[{i}].variable"),
                        "variable in catalog",
                    ));
                    catalog_rule_hit = true;
                }
            }
            Some(entry) => {
                if Some(o.variable) == wellness && o.value != 0.0 && o.value != 1.0 {
                    out.push(violation(format!("observations[{i}].value"), "wellness_checkin in {0,1}"));
                }
                if entry.name.starts_with("qor15_item_") && !(0.0..=10.0).contains(&o.value) {
                    out.push(violation(format!("observations[{i}].value"), "qor15 item in [0,10]"));
                }
            }
        }
        if i > 0 && sorted {
            let p = &rec.observations[i - 1];
            let ordered = match p.t_days.total_cmp(&o.t_days) {
                std::cmp::Ordering::Less => true,
                std::cmp::Ordering::Equal => p.variable <= o.variable,
                std::cmp::Ordering::Greater => false,
            };
            if !ordered {
                out.push(violation("observations", "sorted by t_days"));
                sorted = false;
            }
        }
    }
    for (i, e) in rec.adverse_events.iter().enumerate() {
        if !e.t_days.is_finite() || e.t_days < 0.0 {
            out.push(violation(format!("adverse_events[{i}].t_days"), "t_days ≥ 0"));
        }
    }
    if rec
        .adverse_events
        .windows(2)
        .any(|w| w[0].t_days > w[1].t_days)
    {
        out.push(violation("adverse_events", "sorted by t_days"));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(catalog: &VariableCatalog) -> PatientRecord {
        let hr = catalog.expect_id(DAILY_MAX_HR);
        let wc = catalog.expect_id(WELLNESS_CHECKIN);
        PatientRecord {
            patient_id: "p1".into(),
            static_profile: StaticProfile {
                age: 60.0,
                gender: Gender::Female,
                bmi: 24.0,
            },
            observations: vec![
                Observation { patient_id: "p1".into(), t_days: 1.0, variable: hr, value: 120.0 },
                Observation { patient_id: "p1".into(), t_days: 1.0, variable: wc, value: 1.0 },
                Observation { patient_id: "p1".into(), t_days: 2.5, variable: hr, value: 110.0 },
            ],
            adverse_events: vec![AdverseEvent {
                t_days: 3.0,
                kind: AdverseEventKind::AeVisit,
            }],
            monitoring_start_days: 0.0,
            monitoring_end_days: 10.0,
        }
    }

    #[test]
    fn default_catalog_shape() {
        let c = catalog_default();
        assert_eq!(c.len(), 30);
        assert_eq!(c.entries[0].name, "daily_max_hr");
        assert_eq!(c.count(Category::Event), 8);
        assert_eq!(c.count(Category::Wearable), 4);
        assert_eq!(c.count(Category::Survey), 18);
        for (i, e) in c.entries.iter().enumerate() {
            assert_eq!(e.id.index(), i);
        }
        let mut names: Vec<_> = c.entries.iter().map(|e| e.name.clone()).collect();
        names.sort();
        names.dedup();
        assert_eq!(names.len(), 30);
        assert_eq!(c, catalog_default());
    }

    #[test]
    fn well_formed_record_has_no_violations() {
        let c = catalog_default();
        assert!(validate_record(&record(&c), &c).is_empty());
    }

    #[test]
    fn negative_time_is_one_violation() {
        let c = catalog_default();
        let mut r = record(&c);
        r.observations[0].t_days = -1.0;
        let v = validate_record(&r, &c);
        assert_eq!(v.len(), 1, "{v:?}");
        assert_eq!(v[0].rule, "t_days ≥ 0");
    }

    #[test]
    fn unsorted_observations_is_one_violation() {
        let c = catalog_default();
        let mut r = record(&c);
        r.observations.swap(0, 2);
        let v = validate_record(&r, &c);
        assert_eq!(v.len(), 1, "{v:?}");
        assert_eq!(v[0].rule, "sorted by t_days");
    }

    #[test]
    fn out_of_range_survey_values_are_flagged() {
        let c = catalog_default();
        let mut r = record(&c);
        r.observations[1].value = 0.5;
        let q = c.expect_id("qor15_item_3");
        r.observations.push(Observation { patient_id: "p1".into(), t_days: 3.0, variable: q, value: 11.0 });
        let v = validate_record(&r, &c);
        assert_eq!(v.len(), 2, "{v:?}");
    }

    #[test]
    fn adverse_kind_names_round_trip() {
        for k in AdverseEventKind::ALL {
            assert_eq!(AdverseEventKind::parse(k.as_str()), Some(k));
        }
        assert_eq!(AdverseEventKind::Death.input_variable(), None);
        let c = catalog_default();
        for k in AdverseEventKind::ALL {
            if let Some(v) = k.input_variable() {
                assert_eq!(c.get(c.expect_id(v)).unwrap().category, Category::Event);
            }
        }
    }
}
