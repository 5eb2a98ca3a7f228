//! Artifact writing. Every file opens with the same stamp line so any CSV or
//! plot file can be traced back to its configuration and seed.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::Serialize;
use serde_json::Value;

use crate::error::{CliError, CliResult};
use crate::verify::CriterionOutcome;

/// Shortest round-trip decimal form, so reruns print identical text.
pub fn num(v: f64) -> String {
    format!("{v}")
}

pub struct Artifacts {
    dir: PathBuf,
    stamp: String,
    files: Vec<String>,
}

impl Artifacts {
    pub fn create(dir: &Path, config_hash: &str, seed: u64, subcommand: &str) -> CliResult<Self> {
        std::fs::create_dir_all(dir).map_err(|e| CliError::Output(format!("{}: {e}", dir.display())))?;
        let stamp = format!("# hypodens subcommand={subcommand} config_hash={config_hash} seed={seed}");
        Ok(Self { dir: dir.to_path_buf(), stamp, files: Vec::new() })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn stamp(&self) -> &str {
        &self.stamp
    }

    /// Names written so far, in order.
    pub fn files(&self) -> &[String] {
        &self.files
    }

    fn open(&mut self, name: &str) -> CliResult<BufWriter<File>> {
        let path = self.dir.join(name);
        let file = File::create(&path).map_err(|e| CliError::Output(format!("{}: {e}", path.display())))?;
        self.files.push(name.to_string());
        Ok(BufWriter::new(file))
    }

    fn io_err(&self, name: &str, e: impl std::fmt::Display) -> CliError {
        CliError::Output(format!("{}: {e}", self.dir.join(name).display()))
    }

    pub fn write_csv(&mut self, name: &str, header: &[&str], rows: &[Vec<String>]) -> CliResult<()> {
        let mut w = self.open(name)?;
        writeln!(w, "{}", self.stamp).map_err(|e| self.io_err(name, e))?;
        let mut csv = csv::Writer::from_writer(w);
        csv.write_record(header).map_err(|e| self.io_err(name, e))?;
        for row in rows {
            csv.write_record(row).map_err(|e| self.io_err(name, e))?;
        }
        csv.flush().map_err(|e| self.io_err(name, e))
    }

    /// Two whitespace-separated columns with a commented header.
    pub fn write_plot(&mut self, name: &str, columns: [&str; 2], points: &[(f64, f64)]) -> CliResult<()> {
        let mut text = format!("{}\n# {} {}\n", self.stamp, columns[0], columns[1]);
        for (x, y) in points {
            text.push_str(&format!("{} {}\n", num(*x), num(*y)));
        }
        self.write_text(name, &text)
    }

    pub fn write_text(&mut self, name: &str, text: &str) -> CliResult<()> {
        let mut w = self.open(name)?;
        w.write_all(text.as_bytes()).map_err(|e| self.io_err(name, e))?;
        w.flush().map_err(|e| self.io_err(name, e))
    }
}

/// The structured summary of one run. Holds no timings, so reruns with the
/// same configuration serialize to identical bytes.
#[derive(Debug, Clone, Serialize)]
pub struct Report {
    pub tool: &'static str,
    pub version: &'static str,
    pub subcommand: String,
    pub config_hash: String,
    pub seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub model: Option<String>,
    pub results: BTreeMap<String, Value>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub criteria: Vec<CriterionOutcome>,
    pub artifacts: Vec<String>,
}

impl Report {
    pub fn new(subcommand: &str, config_hash: &str, seed: u64, model: Option<String>) -> Self {
        Self {
            tool: "hypodens",
            version: env!("CARGO_PKG_VERSION"),
            subcommand: subcommand.to_string(),
            config_hash: config_hash.to_string(),
            seed,
            model,
            results: BTreeMap::new(),
            criteria: Vec::new(),
            artifacts: Vec::new(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.results.is_empty() && self.criteria.is_empty()
    }

    /// Pretty JSON; an empty report is refused rather than written.
    pub fn to_json(&self) -> CliResult<String> {
        if self.is_empty() {
            return Err(CliError::Failed("no suite produced results; report not written".into()));
        }
        let mut s = serde_json::to_string_pretty(self).map_err(|e| CliError::Failed(e.to_string()))?;
        s.push('\n');
        Ok(s)
    }
}

/// Wall-clock time per stage, kept apart from the report.
#[derive(Debug, Default)]
pub struct Timings(Vec<(String, Duration)>);

impl Timings {
    pub fn record(&mut self, stage: impl Into<String>, elapsed: Duration) {
        self.0.push((stage.into(), elapsed));
    }

    pub fn render(&self) -> String {
        let mut s = String::from("stage\tseconds\n");
        for (stage, t) in &self.0 {
            s.push_str(&format!("{stage}\t{:.3}\n", t.as_secs_f64()));
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_files_carry_the_stamp() {
        let dir = tempfile::tempdir().unwrap();
        let mut a = Artifacts::create(dir.path(), "abc", 9, "norm").unwrap();
        a.write_csv("t.csv", &["x", "y"], &[vec![num(0.1), num(2.0)]]).unwrap();
        let text = std::fs::read_to_string(dir.path().join("t.csv")).unwrap();
        assert_eq!(text, "# hypodens subcommand=norm config_hash=abc seed=9\nx,y\n0.1,2\n");
        assert_eq!(a.files(), ["t.csv"]);
    }

    #[test]
    fn empty_report_is_an_error() {
        let r = Report::new("density", "h", 1, None);
        assert!(r.to_json().is_err());
    }
}
