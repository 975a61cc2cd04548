//! Key/value run reports.

use std::fmt;
use std::io::{self, Write};
use std::time::Duration;

use krasovskii::dynamics::format_value;

#[derive(Debug, Clone, PartialEq)]
pub enum Metric {
    Value(f64),
    Count(usize),
    Flag(bool),
    Text(String),
    /// Metric not computed, with the reason.
    Skipped(String),
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Metric::Value(v) => f.write_str(&format_value(*v)),
            Metric::Count(n) => write!(f, "{n}"),
            Metric::Flag(b) => write!(f, "{b}"),
            Metric::Text(s) => f.write_str(s),
            Metric::Skipped(_) => f.write_str("skipped"),
        }
    }
}

/// Named check with its measured value and limit.
#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub limit: f64,
    pub passed: bool,
}

impl Check {
    /// Passes when `value ≤ limit` (and `value` is finite).
    pub fn at_most(name: impl Into<String>, value: f64, limit: f64) -> Self {
        Self {
            name: name.into(),
            value,
            limit,
            passed: value <= limit,
        }
    }

    /// Passes when `value < limit`.
    pub fn below(name: impl Into<String>, value: f64, limit: f64) -> Self {
        Self {
            name: name.into(),
            value,
            limit,
            passed: value < limit,
        }
    }

    /// Passes when `passed`; value and limit are the failure count and zero.
    pub fn holds(name: impl Into<String>, failures: usize) -> Self {
        Self {
            name: name.into(),
            value: failures as f64,
            limit: 0.0,
            passed: failures == 0,
        }
    }
}

impl fmt::Display for Check {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {}: {:.3e} (limit {:.3e})",
            if self.passed { "PASS" } else { "FAIL" },
            self.name,
            self.value,
            self.limit
        )
    }
}

#[derive(Debug, Clone, Default)]
pub struct RunReport {
    pub metrics: Vec<(String, Metric)>,
    pub checks: Vec<Check>,
    pub files: Vec<String>,
    pub elapsed: Option<Duration>,
}

impl RunReport {
    pub fn metric(&mut self, key: impl Into<String>, m: Metric) {
        self.metrics.push((key.into(), m));
    }

    pub fn value(&mut self, key: impl Into<String>, v: f64) {
        self.metric(key, Metric::Value(v));
    }

    pub fn check(&mut self, c: Check) {
        self.checks.push(c);
    }

    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn get(&self, key: &str) -> Option<&Metric> {
        self.metrics.iter().find(|(k, _)| k == key).map(|(_, m)| m)
    }

    /// `key,value,note` rows; checks appear as `check:<name>` with the limit
    /// and verdict in the note column.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "key,value,note")?;
        for (k, m) in &self.metrics {
            let note = match m {
                Metric::Skipped(reason) => reason.replace(',', ";"),
                _ => String::new(),
            };
            writeln!(w, "{k},{m},{note}")?;
        }
        for c in &self.checks {
            writeln!(
                w,
                "check:{},{},limit {} {}",
                c.name,
                format_value(c.value),
                format_value(c.limit),
                if c.passed { "pass" } else { "fail" }
            )?;
        }
        if let Some(t) = self.elapsed {
            writeln!(w, "wall_clock_s,{},", format_value(t.as_secs_f64()))?;
        }
        Ok(())
    }
}

impl fmt::Display for RunReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (k, m) in &self.metrics {
            match m {
                Metric::Skipped(reason) => writeln!(f, "{k:<32} skipped ({reason})")?,
                _ => writeln!(f, "{k:<32} {m}")?,
            }
        }
        for c in &self.checks {
            writeln!(f, "{c}")?;
        }
        for file in &self.files {
            writeln!(f, "wrote {file}")?;
        }
        if let Some(t) = self.elapsed {
            writeln!(f, "{:<32} {:.3}", "wall_clock_s", t.as_secs_f64())?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_marks_skipped_metrics() {
        let mut r = RunReport::default();
        r.value("a", 1.5);
        r.metric("b", Metric::Skipped("no data, yet".into()));
        r.check(Check::at_most("c", 1.0, 2.0));
        let mut out = Vec::new();
        r.write_csv(&mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        assert!(text.contains("b,skipped,no data; yet"));
        assert!(text.contains("check:c,"));
        assert!(r.passed());
    }

    #[test]
    fn nan_fails_checks() {
        assert!(!Check::at_most("x", f64::NAN, 1.0).passed);
        assert!(!Check::below("x", 1.0, 1.0).passed);
    }
}
