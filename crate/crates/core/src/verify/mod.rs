//! Self-check suite: gradient checks of every differentiable operation and
//! of the composed model, worked examples of the clustering head and
//! attention, metric oracles, and masking invariants.

mod gradients;
mod oracles;

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::Serialize;

use crate::cluster::KlSign;

/// Result of one check. A check passes when its largest observed error is
/// below its tolerance.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Check {
    pub module: &'static str,
    pub name: String,
    pub tolerance: f64,
    pub max_error: f64,
    /// Set when the check could not run.
    pub failure: Option<String>,
}

impl Check {
    pub fn passed(&self) -> bool {
        self.failure.is_none() && self.max_error < self.tolerance
    }
}

/// Knobs of the suite.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct VerifyOptions {
    /// Sign convention the clustering loss is checked with. Anything other
    /// than the default makes the worked KL examples fail.
    pub kl_sign: KlSign,
    pub seed: u64,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        Self {
            kl_sign: KlSign::Corrected,
            seed: 0,
        }
    }
}

/// Collects checks, turning errors into failed entries.
pub(crate) struct Report {
    pub checks: Vec<Check>,
}

impl Report {
    pub fn record<E: ToString>(
        &mut self,
        module: &'static str,
        name: &str,
        tolerance: f64,
        err: Result<f64, E>,
    ) {
        let (max_error, failure) = match err {
            Ok(e) if e.is_nan() => (f64::INFINITY, Some(String::from("error is NaN"))),
            Ok(e) => (e, None),
            Err(e) => (f64::INFINITY, Some(e.to_string())),
        };
        self.checks.push(Check {
            module,
            name: name.to_string(),
            tolerance,
            max_error,
            failure,
        });
    }

    pub fn value(&mut self, module: &'static str, name: &str, got: f64, want: f64, tolerance: f64) {
        self.record::<String>(module, name, tolerance, Ok((got - want).abs()));
    }
}

/// Runs every check.
pub fn run(options: &VerifyOptions) -> Vec<Check> {
    let mut report = Report { checks: Vec::new() };
    gradients::run(&mut report, options);
    oracles::run(&mut report, options);
    report.checks
}

/// Modules with at least one failing check, in suite order.
pub fn failing_modules(checks: &[Check]) -> Vec<&'static str> {
    let mut out: Vec<&'static str> = Vec::new();
    for c in checks.iter().filter(|c| !c.passed()) {
        if !out.contains(&c.module) {
            out.push(c.module);
        }
    }
    out
}

/// One line per check: status, module, name, error and tolerance.
pub fn format_check(c: &Check) -> String {
    let status = if c.passed() { "ok  " } else { "FAIL" };
    let mut line = format!(
        "{status} {:<10} {:<44} max_err {:.3e} tol {:.0e}",
        c.module, c.name, c.max_error, c.tolerance
    );
    if let Some(f) = &c.failure {
        line.push_str(&format!(" ({f})"));
    }
    line
}

#[cfg(test)]
mod tests;
