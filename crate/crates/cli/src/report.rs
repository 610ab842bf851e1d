//! Machine-readable cohort report. Every subject row carries the full metric
//! key set; a missing value is `null` with a reason code beside it.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use seg_uq::classify::Interval;
use seg_uq::seg_metrics::aggregate;

use crate::config::PipelineConfig;

pub const TOOL_NAME: &str = "seg-uq";
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

/// Per-subject metrics, in report order.
pub const METRIC_NAMES: [&str; 17] = [
    "dice",
    "avd_percent",
    "component_f1",
    "precision",
    "recall",
    "top_dice",
    "top_avd",
    "ged",
    "mean_entropy",
    "sueo",
    "ueo_max",
    "tau_ueo_max",
    "tau_ref",
    "pavpu_ref",
    "coverage_ref",
    "undetected_strict_ref",
    "undetected_relaxed_ref",
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageError {
    pub stage: String,
    pub code: String,
    pub message: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubjectRow {
    pub id: String,
    pub metrics: BTreeMap<String, Option<f64>>,
    /// Reason code for each `null` metric.
    pub missing: BTreeMap<String, String>,
    pub errors: Vec<StageError>,
}

impl SubjectRow {
    pub fn new(id: &str) -> Self {
        Self {
            id: id.to_string(),
            metrics: METRIC_NAMES.iter().map(|m| (m.to_string(), None)).collect(),
            missing: METRIC_NAMES.iter().map(|m| (m.to_string(), "not_computed".to_string())).collect(),
            errors: Vec::new(),
        }
    }

    pub fn set(&mut self, name: &str, value: Option<f64>, reason: &str) {
        debug_assert!(METRIC_NAMES.contains(&name), "unknown metric {name}");
        match value {
            Some(v) => {
                self.metrics.insert(name.to_string(), Some(v));
                self.missing.remove(name);
            }
            None => {
                self.metrics.insert(name.to_string(), None);
                self.missing.insert(name.to_string(), reason.to_string());
            }
        }
    }

    /// Marks every metric not yet set with `code`.
    pub fn fail_remaining(&mut self, code: &str) {
        for v in self.missing.values_mut().filter(|v| *v == "not_computed") {
            *v = code.to_string();
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub mean: f64,
    pub std_runs: Option<f64>,
    pub std_subjects: Option<f64>,
    pub n: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CohortError {
    pub stage: String,
    pub target: Option<String>,
    pub code: String,
    pub message: String,
}

/// Outcome of one classification target.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassifyStatus {
    /// `ok`, `skipped` or `error`.
    pub status: String,
    pub reason: Option<String>,
    pub k: usize,
    pub n_subjects: usize,
    pub kappa: Option<Interval>,
    pub balanced_accuracy: Option<Interval>,
    pub auroc: Option<Interval>,
    pub root_brier: Option<Interval>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub tool: String,
    pub version: String,
    pub config: PipelineConfig,
    pub subjects: Vec<SubjectRow>,
    /// Over subjects with a value; one run, so `std_runs` is `null`.
    pub aggregate: BTreeMap<String, Option<AggregateRow>>,
    pub classification: BTreeMap<String, ClassifyStatus>,
    pub cohort_errors: Vec<CohortError>,
}

impl MetricReport {
    pub fn new(
        config: PipelineConfig,
        mut subjects: Vec<SubjectRow>,
        classification: BTreeMap<String, ClassifyStatus>,
        cohort_errors: Vec<CohortError>,
    ) -> Self {
        subjects.sort_by(|a, b| a.id.cmp(&b.id));
        let aggregate = METRIC_NAMES
            .iter()
            .map(|&m| {
                let values: Vec<f64> = subjects.iter().filter_map(|s| s.metrics.get(m).copied().flatten()).collect();
                let row = aggregate(&[values.clone()]).ok().map(|a| AggregateRow {
                    mean: a.mean,
                    std_runs: a.std_runs,
                    std_subjects: a.std_subjects,
                    n: values.len(),
                });
                (m.to_string(), row)
            })
            .collect();
        Self {
            tool: TOOL_NAME.to_string(),
            version: TOOL_VERSION.to_string(),
            config,
            subjects,
            aggregate,
            classification,
            cohort_errors,
        }
    }

    pub fn has_errors(&self) -> bool {
        !self.cohort_errors.is_empty() || self.subjects.iter().any(|s| !s.errors.is_empty())
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }
}
