use std::io::Write;
use std::path::PathBuf;

use anyhow::{Context, Result};
use serde_json::Value;

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum Format {
    Json,
    Csv,
}

/// Significant digits for printed reals; `None` keeps full precision.
#[derive(Clone, Copy, Debug)]
pub struct Precision(pub Option<usize>);

impl std::str::FromStr for Precision {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "full" {
            return Ok(Self(None));
        }
        match s.parse::<usize>() {
            Ok(d) if (1..=17).contains(&d) => Ok(Self(Some(d))),
            _ => Err(format!("precision must be 1..=17 or `full`, got `{s}`")),
        }
    }
}

impl Precision {
    pub fn round(self, v: f64) -> f64 {
        match self.0 {
            Some(d) if v.is_finite() && v != 0.0 => format!("{v:.*e}", d - 1).parse().unwrap_or(v),
            _ => v,
        }
    }

    pub fn apply(self, value: &mut Value) {
        match value {
            Value::Number(n) if n.is_f64() => {
                if let Some(r) = n.as_f64().map(|v| self.round(v)).and_then(serde_json::Number::from_f64) {
                    *n = r;
                }
            }
            Value::Array(items) => items.iter_mut().for_each(|v| self.apply(v)),
            Value::Object(map) => map.values_mut().for_each(|v| self.apply(v)),
            _ => {}
        }
    }

    pub fn cell(self, v: f64) -> String {
        let r = self.round(v);
        if v.is_nan() {
            String::new()
        } else if r == 0.0 || (1e-4..1e15).contains(&r.abs()) {
            r.to_string()
        } else {
            format!("{r:e}")
        }
    }
}

/// A command's result: a JSON document plus a flat table for CSV output.
pub struct Report {
    pub json: Value,
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

pub struct Sink {
    pub format: Format,
    pub precision: Precision,
    pub output: Option<PathBuf>,
}

impl Sink {
    fn writer(&self) -> Result<Box<dyn Write>> {
        Ok(match &self.output {
            Some(p) => Box::new(std::fs::File::create(p).with_context(|| format!("creating {}", p.display()))?),
            None => Box::new(std::io::stdout().lock()),
        })
    }

    pub fn json_string(&self, mut value: Value) -> String {
        self.precision.apply(&mut value);
        serde_json::to_string_pretty(&value).expect("JSON values serialize")
    }

    pub fn emit(&self, report: Report) -> Result<()> {
        let mut out = self.writer()?;
        match self.format {
            Format::Json => writeln!(out, "{}", self.json_string(report.json))?,
            Format::Csv => {
                let mut w = csv::Writer::from_writer(out);
                w.write_record(&report.header)?;
                for row in &report.rows {
                    w.write_record(row)?;
                }
                w.flush()?;
            }
        }
        Ok(())
    }
}
