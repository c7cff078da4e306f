//! Common JSON shape for verification reports.

use std::collections::BTreeMap;

use serde::Serialize;

/// Every verification check serializes to this document:
/// `{check, samples, worst_ratio, constants, pass}`.
#[derive(Clone, Debug, Serialize)]
pub struct CheckReport {
    pub check: String,
    pub samples: usize,
    pub worst_ratio: f64,
    pub constants: BTreeMap<String, f64>,
    pub pass: bool,
}

impl CheckReport {
    pub fn new(check: &str, samples: usize, worst_ratio: f64, pass: bool) -> Self {
        Self {
            check: check.to_string(),
            samples,
            worst_ratio,
            constants: BTreeMap::new(),
            pass,
        }
    }

    pub fn with_constant(mut self, name: &str, value: f64) -> Self {
        self.constants.insert(name.to_string(), value);
        self
    }
}
