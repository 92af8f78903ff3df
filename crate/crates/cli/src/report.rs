//! Experiment reports: metric tables, numeric series (spectra, convergence
//! curves), scalar summaries and the resolved config.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::io::{read_series_csv, write_series_csv};
use crate::CliError;

/// Named series, keyed by name.
pub type SeriesMap = BTreeMap<String, Vec<f64>>;

/// A small table whose cells are rendered as strings (numbers use the
/// shortest representation that round-trips; missing values are `NA`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Table {
    pub name: String,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(name: &str, columns: &[&str]) -> Self {
        Self {
            name: name.to_string(),
            columns: columns.iter().map(|c| c.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    /// Looks up a cell by the value in the first column and a column name.
    pub fn get(&self, key: &str, column: &str) -> Option<&str> {
        let c = self.columns.iter().position(|x| x == column)?;
        self.rows.iter().find(|r| r[0] == key).map(|r| r[c].as_str())
    }

    pub fn write_csv(&self, path: &Path) -> Result<(), CliError> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(&self.columns)?;
        for r in &self.rows {
            w.write_record(r)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv(name: &str, path: &Path) -> Result<Self, CliError> {
        let mut r = csv::Reader::from_path(path)?;
        let columns = r.headers()?.iter().map(String::from).collect();
        let rows = r
            .records()
            .map(|rec| rec.map(|rec| rec.iter().map(String::from).collect()))
            .collect::<Result<_, _>>()?;
        Ok(Self {
            name: name.to_string(),
            columns,
            rows,
        })
    }
}

pub fn cell(v: f64) -> String {
    format!("{v}")
}

pub const NA: &str = "NA";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub experiment: String,
    pub seed: u64,
    pub config: ExperimentConfig,
    pub tables: Vec<Table>,
    pub series: BTreeMap<String, Vec<f64>>,
    pub summary: BTreeMap<String, f64>,
    pub flags: Vec<String>,
    /// Kept out of `report.json` so that reports are byte-identical across
    /// runs; written to `timing.json` instead.
    #[serde(skip)]
    pub wall_clock_secs: f64,
}

impl ExperimentReport {
    pub fn new(experiment: &str, config: &ExperimentConfig) -> Self {
        Self {
            experiment: experiment.to_string(),
            seed: config.seed,
            config: config.clone(),
            tables: Vec::new(),
            series: BTreeMap::new(),
            summary: BTreeMap::new(),
            flags: Vec::new(),
            wall_clock_secs: 0.0,
        }
    }

    pub fn table(&self, name: &str) -> Option<&Table> {
        self.tables.iter().find(|t| t.name == name)
    }

    pub fn to_json(&self) -> Result<String, CliError> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Writes `report.json`, `timing.json`, one CSV per table and one CSV per
    /// series into `dir`.
    pub fn write_dir(&self, dir: &Path) -> Result<(), CliError> {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("report.json"), self.to_json()?)?;
        let timing = serde_json::json!({ "wall_clock_secs": self.wall_clock_secs });
        fs::write(dir.join("timing.json"), serde_json::to_string_pretty(&timing)?)?;
        for t in &self.tables {
            t.write_csv(&dir.join(format!("{}.csv", t.name)))?;
        }
        for (name, values) in &self.series {
            write_series_csv(&dir.join(format!("{name}.csv")), values)?;
        }
        Ok(())
    }

    pub fn read_dir(dir: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(dir.join("report.json"))?;
        let mut report: Self = serde_json::from_str(&text)?;
        if let Ok(t) = fs::read_to_string(dir.join("timing.json")) {
            let v: serde_json::Value = serde_json::from_str(&t)?;
            report.wall_clock_secs = v["wall_clock_secs"].as_f64().unwrap_or(0.0);
        }
        Ok(report)
    }

    /// Reloads the tables and series from their CSV files, for round-trip
    /// checks against the JSON copy.
    pub fn read_csv_artifacts(&self, dir: &Path) -> Result<(Vec<Table>, SeriesMap), CliError> {
        let tables = self
            .tables
            .iter()
            .map(|t| Table::read_csv(&t.name, &dir.join(format!("{}.csv", t.name))))
            .collect::<Result<_, _>>()?;
        let series = self
            .series
            .keys()
            .map(|k| Ok((k.clone(), read_series_csv(&dir.join(format!("{k}.csv")))?)))
            .collect::<Result<_, CliError>>()?;
        Ok((tables, series))
    }
}
