use std::path::Path;

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Pass,
    Fail,
    /// Reported without a threshold.
    Measured,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Check {
    pub section: String,
    pub subject: String,
    pub name: String,
    /// Hard checks decide the exit code; the rest are thresholded measurements.
    pub hard: bool,
    pub status: Status,
    pub value: f64,
    pub limit: Option<f64>,
    pub detail: String,
}

impl Check {
    /// Passes when `value <= limit`.
    pub fn at_most(section: &str, subject: &str, name: &str, hard: bool, value: f64, limit: f64) -> Self {
        Self::with(section, subject, name, hard, value, Some(limit), value <= limit)
    }

    /// Passes when `value >= limit`.
    pub fn at_least(section: &str, subject: &str, name: &str, hard: bool, value: f64, limit: f64) -> Self {
        Self::with(section, subject, name, hard, value, Some(limit), value >= limit)
    }

    pub fn flag(section: &str, subject: &str, name: &str, hard: bool, ok: bool) -> Self {
        Self::with(section, subject, name, hard, f64::from(u8::from(ok)), Some(1.0), ok)
    }

    pub fn measured(section: &str, subject: &str, name: &str, value: f64) -> Self {
        Self {
            section: section.into(),
            subject: subject.into(),
            name: name.into(),
            hard: false,
            status: Status::Measured,
            value,
            limit: None,
            detail: String::new(),
        }
    }

    fn with(section: &str, subject: &str, name: &str, hard: bool, value: f64, limit: Option<f64>, ok: bool) -> Self {
        Self {
            section: section.into(),
            subject: subject.into(),
            name: name.into(),
            hard,
            status: if ok { Status::Pass } else { Status::Fail },
            value,
            limit,
            detail: String::new(),
        }
    }

    pub fn detail(mut self, d: impl Into<String>) -> Self {
        self.detail = d.into();
        self
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Runtime {
    pub section: String,
    pub seconds: f64,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct SuiteReport {
    pub config_hash: String,
    pub command: String,
    pub checks: Vec<Check>,
    pub hard_failures: usize,
    pub measured_failures: usize,
    /// Wall-clock times; the only fields that differ between identical runs.
    pub runtimes: Vec<Runtime>,
}

impl SuiteReport {
    pub fn finish(&mut self) {
        self.hard_failures = self.checks.iter().filter(|c| c.hard && c.status == Status::Fail).count();
        self.measured_failures = self.checks.iter().filter(|c| !c.hard && c.status == Status::Fail).count();
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        let path = dir.join("report.json");
        std::fs::write(&path, serde_json::to_string_pretty(self)?).with_context(|| format!("writing {}", path.display()))
    }
}

/// Plot-ready tables produced by the sections.
#[derive(Clone, Debug)]
pub enum PlotData {
    /// `(n, E_n, √E_n |{V < E_n}|)`.
    Eigenvalues { file: String, rows: Vec<(usize, f64, f64)> },
    /// `(|n - m|, max |P_nm| / E_n)` sorted by `|n - m|`.
    Decay { file: String, rows: Vec<(usize, f64)> },
    /// `(ϑ, r, x', moment, norm_sq, ratio)`.
    Ratios { file: String, rows: Vec<[f64; 6]> },
}

/// Writes each table as CSV in `dir`.
pub fn emit_plot_data(data: &[PlotData], dir: &Path) -> Result<()> {
    for d in data {
        match d {
            PlotData::Eigenvalues { file, rows } => {
                let mut w = csv::Writer::from_path(dir.join(file))?;
                w.write_record(["n", "E_n", "phase_volume", "phase_volume_over_n"])?;
                for (n, e, pv) in rows {
                    w.write_record(&[n.to_string(), fmt(*e), fmt(*pv), fmt(pv / *n as f64)])?;
                }
                w.flush()?;
            }
            PlotData::Decay { file, rows } => {
                let mut w = csv::Writer::from_path(dir.join(file))?;
                w.write_record(["abs_n_minus_m", "max_p_over_e"])?;
                for (k, v) in rows {
                    w.write_record(&[k.to_string(), fmt(*v)])?;
                }
                w.flush()?;
            }
            PlotData::Ratios { file, rows } => {
                let mut w = csv::Writer::from_path(dir.join(file))?;
                w.write_record(["theta", "r", "xprime", "moment", "norm_sq", "ratio"])?;
                for row in rows {
                    w.write_record(row.iter().map(|v| fmt(*v)))?;
                }
                w.flush()?;
            }
        }
    }
    Ok(())
}

fn fmt(v: f64) -> String {
    format!("{v:.17e}")
}

/// File-name fragment for a potential label or multiplier id.
pub fn slug(s: &str) -> String {
    let mut out = String::new();
    for c in s.chars() {
        match c {
            'a'..='z' | 'A'..='Z' | '0'..='9' | '.' | '-' => out.push(c),
            '+' => out.push_str("_plus_"),
            '^' => out.push('p'),
            _ => {
                if !out.ends_with('_') {
                    out.push('_')
                }
            }
        }
    }
    out.trim_matches('_').to_string()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn slugs_are_file_safe() {
        assert_eq!(slug("|x|^2"), "x_p2");
        assert_eq!(slug("|x|^1+|x|^4"), "x_p1_plus_x_p4");
        assert_eq!(slug("|x|^3log(2+|x|)"), "x_p3log_2_plus_x");
    }

    #[test]
    fn counts_failures_by_kind() {
        let mut r = SuiteReport {
            checks: vec![
                Check::at_most("s", "v", "a", true, 2.0, 1.0),
                Check::at_most("s", "v", "b", false, 2.0, 1.0),
                Check::at_least("s", "v", "c", true, 2.0, 1.0),
                Check::measured("s", "v", "d", 3.0),
            ],
            ..Default::default()
        };
        r.finish();
        assert_eq!((r.hard_failures, r.measured_failures), (1, 1));
    }
}
