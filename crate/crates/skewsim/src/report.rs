//! Report vocabulary shared by the condition checkers and the experiments.
//! Reports are plain serializable data; verdicts are booleans derived from
//! tolerances pinned at the call site, never recomputed downstream.

use serde::{Deserialize, Serialize};

/// One violated condition with a witness point.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Violation {
    /// Short tag of the violated condition, e.g. "(A1)" or "modulus-bound".
    pub condition: String,
    /// Location in state space where the violation was observed.
    pub witness: f64,
    /// The offending value (weight, integral, ratio...), capped to stay finite.
    pub value: f64,
    pub detail: String,
}

/// Outcome of a structural condition check. `passed` holds iff `violations`
/// is empty; `notes` carries sub-verdicts in human-readable form.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConditionReport {
    pub passed: bool,
    pub violations: Vec<Violation>,
    pub notes: String,
}

impl ConditionReport {
    pub fn new(violations: Vec<Violation>, notes: impl Into<String>) -> Self {
        ConditionReport { passed: violations.is_empty(), violations, notes: notes.into() }
    }

    /// True when no violation carries the given condition tag.
    pub fn clause_passes(&self, tag: &str) -> bool {
        !self.violations.iter().any(|v| v.condition == tag)
    }
}

/// One scalar check inside an experiment.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Metric {
    pub label: String,
    pub value: f64,
    /// Tolerance the value was compared against (absolute unless the label
    /// says otherwise). 0.0 when the metric is informational.
    pub tolerance: f64,
    pub pass: bool,
}

impl Metric {
    pub fn checked(label: impl Into<String>, value: f64, tolerance: f64, pass: bool) -> Self {
        Metric { label: label.into(), value, tolerance, pass }
    }

    pub fn info(label: impl Into<String>, value: f64) -> Self {
        Metric { label: label.into(), value, tolerance: 0.0, pass: true }
    }
}

/// One row of a refinement study: a resolution parameter and the metric
/// observed at it.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RefinementRow {
    pub label: String,
    pub parameter: f64,
    pub metric: f64,
}

/// Full result of an experiment: inputs echo, scalar metrics, refinement
/// rows, and the overall verdict (AND of all metric passes).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub name: String,
    pub inputs: serde_json::Value,
    pub metrics: Vec<Metric>,
    pub refinement_table: Vec<RefinementRow>,
    pub verdict: bool,
}

impl ExperimentReport {
    pub fn new(
        name: impl Into<String>,
        inputs: serde_json::Value,
        metrics: Vec<Metric>,
        refinement_table: Vec<RefinementRow>,
    ) -> Self {
        let verdict = metrics.iter().all(|m| m.pass);
        ExperimentReport { name: name.into(), inputs, metrics, refinement_table, verdict }
    }

    pub fn metric(&self, label: &str) -> Option<&Metric> {
        self.metrics.iter().find(|m| m.label == label)
    }
}
