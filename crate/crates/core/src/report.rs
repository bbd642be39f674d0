//! Uniform pass/fail records for verification runs.

use serde::{Deserialize, Serialize};
use serde_json::Value;
use std::collections::BTreeMap;
use std::time::Instant;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Tolerance {
    /// |computed - reference| <= tolerance
    Absolute,
    /// |computed - reference| <= tolerance * |reference|
    Relative,
    /// computed <= reference + tolerance
    AtMost,
}

fn yes() -> bool {
    true
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub name: String,
    pub parameters: BTreeMap<String, Value>,
    pub computed: f64,
    pub reference: f64,
    pub tolerance: f64,
    pub mode: Tolerance,
    pub passed: bool,
    /// false when a sub-check besides the headline number failed
    #[serde(default = "yes")]
    pub checks_ok: bool,
    pub runtime_seconds: f64,
    /// auxiliary diagnostics that do not enter the verdict
    pub extra: BTreeMap<String, f64>,
}

impl ExperimentReport {
    pub fn new(name: &str, computed: f64, reference: f64, tolerance: f64, mode: Tolerance) -> Self {
        let mut r = ExperimentReport {
            name: name.to_string(),
            parameters: BTreeMap::new(),
            computed,
            reference,
            tolerance,
            mode,
            passed: false,
            checks_ok: true,
            runtime_seconds: 0.0,
            extra: BTreeMap::new(),
        };
        r.passed = r.verdict();
        r
    }

    pub fn verdict(&self) -> bool {
        let dev = (self.computed - self.reference).abs();
        match self.mode {
            Tolerance::Absolute => dev <= self.tolerance,
            Tolerance::Relative => dev <= self.tolerance * self.reference.abs(),
            Tolerance::AtMost => self.computed <= self.reference + self.tolerance,
        }
    }

    pub fn param(mut self, key: &str, v: impl Into<Value>) -> Self {
        self.parameters.insert(key.to_string(), v.into());
        self
    }

    pub fn extra(mut self, key: &str, v: f64) -> Self {
        self.extra.insert(key.to_string(), v);
        self
    }

    /// Stamp the runtime and force the verdict to false when `ok` is false
    /// (used when sub-checks failed besides the headline number).
    pub fn finish(mut self, start: Instant, ok: bool) -> Self {
        self.runtime_seconds = start.elapsed().as_secs_f64();
        self.checks_ok = ok;
        self.passed = self.verdict() && ok;
        self
    }

    /// Replace the headline tolerance; failed sub-checks still fail.
    pub fn with_tolerance(mut self, tol: f64) -> Self {
        self.tolerance = tol;
        self.passed = self.verdict() && self.checks_ok;
        self
    }

    pub fn summary_line(&self) -> String {
        format!(
            "{} {}: computed={:.6e} reference={:.6e} tol={:.1e} ({:?}) [{:.2}s]",
            if self.passed { "PASS" } else { "FAIL" },
            self.name,
            self.computed,
            self.reference,
            self.tolerance,
            self.mode,
            self.runtime_seconds
        )
    }
}
