use serde::ser::SerializeMap;
use serde::{Serialize, Serializer};

use crate::montecarlo::MeanEstimate;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Pass,
    Fail,
    Informational,
    Disabled,
}

/// One verification check with its statistics.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckEntry {
    pub name: String,
    pub status: Status,
    pub residual: MeanEstimate,
    pub paths: usize,
    /// Named scalar diagnostics in insertion order.
    #[serde(serialize_with = "as_map")]
    pub details: Vec<(String, f64)>,
    pub note: String,
    /// Per-path residuals behind `residual`, in path order.
    #[serde(skip)]
    pub samples: Vec<f64>,
}

fn as_map<S: Serializer>(details: &[(String, f64)], s: S) -> Result<S::Ok, S::Error> {
    let mut m = s.serialize_map(Some(details.len()))?;
    for (k, v) in details {
        m.serialize_entry(k, v)?;
    }
    m.end()
}

impl CheckEntry {
    pub fn new(name: impl Into<String>, status: Status, residual: MeanEstimate) -> Self {
        Self {
            name: name.into(),
            status,
            paths: residual.n,
            residual,
            details: Vec::new(),
            note: String::new(),
            samples: Vec::new(),
        }
    }

    /// Entry whose residual statistics are those of `samples`.
    pub fn from_samples(name: impl Into<String>, status: Status, samples: Vec<f64>) -> Self {
        let mut e = Self::new(name, status, MeanEstimate::from_samples(&samples));
        e.samples = samples;
        e
    }

    pub fn disabled(name: impl Into<String>, why: impl Into<String>) -> Self {
        let mut e = Self::new(name, Status::Disabled, MeanEstimate::from_samples(&[]));
        e.note = why.into();
        e
    }

    pub fn with(mut self, key: &str, value: f64) -> Self {
        self.details.push((key.to_string(), value));
        self
    }

    pub fn with_note(mut self, note: impl Into<String>) -> Self {
        self.note = note.into();
        self
    }

    pub fn detail(&self, key: &str) -> Option<f64> {
        self.details.iter().find(|(k, _)| k == key).map(|(_, v)| *v)
    }

    pub fn is_finite(&self) -> bool {
        let r = &self.residual;
        [r.mean, r.std_err, r.radius].iter().all(|v| v.is_finite())
            && (r.n == 0 || r.max.is_finite())
            && self.details.iter().all(|(_, v)| v.is_finite() || v.is_infinite())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GridMetadata {
    pub dim: usize,
    pub nodes_per_axis: Vec<usize>,
    pub extents: Vec<f64>,
    pub steps: usize,
    pub horizon: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerificationReport {
    pub grid: GridMetadata,
    pub checks: Vec<CheckEntry>,
}

impl VerificationReport {
    pub fn new(grid: GridMetadata) -> Self {
        Self { grid, checks: Vec::new() }
    }

    /// Adds a check, replacing an earlier one with the same name so every
    /// check appears once.
    pub fn push(&mut self, entry: CheckEntry) {
        if let Some(e) = self.checks.iter_mut().find(|e| e.name == entry.name) {
            *e = entry;
        } else {
            self.checks.push(entry);
        }
    }

    pub fn all_pass(&self) -> bool {
        self.checks.iter().all(|c| c.status != Status::Fail)
    }

    pub fn failed(&self) -> Vec<&str> {
        self.checks.iter().filter(|c| c.status == Status::Fail).map(|c| c.name.as_str()).collect()
    }

    pub fn get(&self, name: &str) -> Option<&CheckEntry> {
        self.checks.iter().find(|c| c.name == name)
    }
}
