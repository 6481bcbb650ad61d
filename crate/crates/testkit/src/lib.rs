//! Test-side oracles and the acceptance checks built on them.
//!
//! The oracles deliberately avoid the library's own helpers: coverage is a
//! per-neuron loop over the raw trace, AP re-ranks and re-matches every
//! prefix from scratch, and gradients come from central differences.

pub mod checks;
pub mod gen;
pub mod oracle;

use std::time::Duration;

/// Result of one acceptance check.
#[derive(Debug, Clone)]
pub struct Outcome {
    pub passed: bool,
    pub detail: String,
    pub elapsed: Duration,
}

impl Outcome {
    pub fn line(&self, index: usize, name: &str) -> String {
        format!(
            "criterion {index} [{}] {name}: {} ({:.1}s)",
            if self.passed { "PASS" } else { "FAIL" },
            self.detail,
            self.elapsed.as_secs_f64()
        )
    }
}
