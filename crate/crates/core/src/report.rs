//! Structured pass/fail records shared by every check.

use std::time::Instant;

use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Status {
    Pass,
    Fail,
    Skipped,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CaseDetail {
    pub case: String,
    /// `None` when the case errored before producing a number.
    pub error: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub suite_name: String,
    pub status: Status,
    /// `None` when some case could not be evaluated (the suite then fails).
    pub measured_max_error: Option<f64>,
    pub tolerance: f64,
    pub trials_run: u64,
    pub resamples: u64,
    pub seed: u64,
    pub details: Vec<CaseDetail>,
    pub wall_time_ms: f64,
}

impl VerificationReport {
    pub fn passed(&self) -> bool {
        self.status == Status::Pass
    }

    /// A copy with timing zeroed, for reproducibility comparisons.
    pub fn without_timing(&self) -> VerificationReport {
        VerificationReport {
            wall_time_ms: 0.0,
            ..self.clone()
        }
    }

    pub fn skipped(name: &str, seed: u64, reason: &str) -> VerificationReport {
        VerificationReport {
            suite_name: name.to_string(),
            status: Status::Skipped,
            measured_max_error: None,
            tolerance: 0.0,
            trials_run: 0,
            resamples: 0,
            seed,
            details: vec![CaseDetail {
                case: "skipped".into(),
                error: None,
                note: Some(reason.to_string()),
            }],
            wall_time_ms: 0.0,
        }
    }
}

/// Accumulates per-case errors into a report.
#[derive(Debug)]
pub struct Tally {
    start: Instant,
    max_error: f64,
    failed_case: bool,
    trials: u64,
    resamples: u64,
    details: Vec<CaseDetail>,
    keep_details: usize,
}

impl Default for Tally {
    fn default() -> Self {
        Tally::new()
    }
}

impl Tally {
    pub fn new() -> Tally {
        Tally {
            start: Instant::now(),
            max_error: 0.0,
            failed_case: false,
            trials: 0,
            resamples: 0,
            details: Vec::new(),
            keep_details: 32,
        }
    }

    /// Keep at most `n` routine details (errored and worst cases are always kept).
    pub fn keep_details(mut self, n: usize) -> Tally {
        self.keep_details = n;
        self
    }

    pub fn record(&mut self, case: impl Into<String>, error: f64) {
        self.trials += 1;
        let bad = !error.is_finite();
        if bad {
            self.failed_case = true;
        } else if error > self.max_error {
            self.max_error = error;
        }
        if bad || self.details.len() < self.keep_details {
            self.details.push(CaseDetail {
                case: case.into(),
                error: error.is_finite().then_some(error),
                note: None,
            });
        }
    }

    pub fn record_with_note(&mut self, case: impl Into<String>, error: f64, note: impl Into<String>) {
        self.record(case, error);
        if let Some(last) = self.details.last_mut() {
            last.note = Some(note.into());
        }
    }

    /// A case that could not be evaluated; the suite fails.
    pub fn record_failure(&mut self, case: impl Into<String>, note: impl Into<String>) {
        self.trials += 1;
        self.failed_case = true;
        self.details.push(CaseDetail {
            case: case.into(),
            error: None,
            note: Some(note.into()),
        });
    }

    pub fn add_resamples(&mut self, n: u64) {
        self.resamples += n;
    }

    pub fn note(&mut self, case: impl Into<String>, note: impl Into<String>) {
        self.details.push(CaseDetail {
            case: case.into(),
            error: None,
            note: Some(note.into()),
        });
    }

    pub fn merge(&mut self, other: Tally) {
        self.trials += other.trials;
        self.resamples += other.resamples;
        self.failed_case |= other.failed_case;
        self.max_error = self.max_error.max(other.max_error);
        self.details.extend(other.details);
    }

    pub fn max_error(&self) -> f64 {
        self.max_error
    }

    /// Pass iff `tolerance > 0`, every case produced a number and the maximum is within tolerance.
    pub fn finish(self, suite_name: &str, tolerance: f64, seed: u64) -> VerificationReport {
        let measured = (!self.failed_case).then_some(self.max_error);
        let pass = tolerance > 0.0 && measured.is_some_and(|e| e <= tolerance);
        VerificationReport {
            suite_name: suite_name.to_string(),
            status: if pass { Status::Pass } else { Status::Fail },
            measured_max_error: measured,
            tolerance,
            trials_run: self.trials,
            resamples: self.resamples,
            seed,
            details: self.details,
            wall_time_ms: self.start.elapsed().as_secs_f64() * 1e3,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_tolerance_fails() {
        let mut t = Tally::new();
        t.record("exact", 0.0);
        assert_eq!(t.finish("s", 0.0, 1).status, Status::Fail);
    }

    #[test]
    fn pass_iff_within_tolerance() {
        let mut t = Tally::new();
        t.record("a", 1e-9);
        assert!(t.finish("s", 1e-8, 1).passed());
        let mut t = Tally::new();
        t.record("a", 1e-7);
        assert!(!t.finish("s", 1e-8, 1).passed());
        let mut t = Tally::new();
        t.record_failure("a", "broke");
        let r = t.finish("s", 1.0, 1);
        assert!(!r.passed());
        assert_eq!(r.measured_max_error, None);
    }
}
