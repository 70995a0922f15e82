//! Numeric result tables and their CSV / JSON forms.
//!
//! CSV: `#`-prefixed comment lines (column units and provenance), one header
//! row, then one row per record, every number in scientific notation with
//! 17 significant digits. JSON: an object with the same comments and one
//! record object per row keyed by the column names. Non-finite values are
//! written as `NaN`/`inf` in CSV and as `null` (NaN) in JSON.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use anyhow::{bail, Context};
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ResultTable {
    pub comments: Vec<String>,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

#[derive(Serialize, Deserialize)]
struct JsonTable {
    comments: Vec<String>,
    columns: Vec<String>,
    records: Vec<Map<String, Value>>,
}

pub fn format_number(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.16e}")
    } else {
        x.to_string()
    }
}

impl ResultTable {
    pub fn new<S: Into<String>>(columns: impl IntoIterator<Item = S>) -> Self {
        Self { comments: Vec::new(), columns: columns.into_iter().map(Into::into).collect(), rows: Vec::new() }
    }

    pub fn comment(&mut self, line: impl Into<String>) -> &mut Self {
        self.comments.push(line.into());
        self
    }

    pub fn push(&mut self, row: Vec<f64>) {
        assert_eq!(row.len(), self.columns.len(), "row width must match the header");
        self.rows.push(row);
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let k = self.columns.iter().position(|c| c == name)?;
        Some(self.rows.iter().map(|r| r[k]).collect())
    }

    pub fn to_csv_string(&self) -> anyhow::Result<String> {
        let mut out = Vec::new();
        self.write_csv_to(&mut out)?;
        Ok(String::from_utf8(out)?)
    }

    fn write_csv_to(&self, out: &mut impl Write) -> anyhow::Result<()> {
        for c in &self.comments {
            for line in c.lines() {
                writeln!(out, "# {line}")?;
            }
        }
        let mut w = csv::WriterBuilder::new().from_writer(out);
        w.write_record(&self.columns)?;
        for row in &self.rows {
            w.write_record(row.iter().map(|x| format_number(*x)))?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_csv(&self, path: &Path) -> anyhow::Result<()> {
        let file = File::create(path).with_context(|| format!("cannot write {}", path.display()))?;
        let mut out = BufWriter::new(file);
        self.write_csv_to(&mut out)?;
        out.flush()?;
        Ok(())
    }

    pub fn from_csv_str(text: &str) -> anyhow::Result<Self> {
        Self::read_csv_from(text.as_bytes())
    }

    pub fn read_csv(path: &Path) -> anyhow::Result<Self> {
        let file = File::open(path).with_context(|| format!("cannot read {}", path.display()))?;
        Self::read_csv_from(BufReader::new(file))
    }

    fn read_csv_from(mut input: impl BufRead) -> anyhow::Result<Self> {
        let mut text = String::new();
        input.read_to_string(&mut text)?;
        let comments = text
            .lines()
            .take_while(|l| l.starts_with('#'))
            .map(|l| l.strip_prefix("# ").unwrap_or(&l[1..]).to_string())
            .collect();
        let mut r = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(text.as_bytes());
        let columns: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
        let mut rows = Vec::new();
        for (i, rec) in r.records().enumerate() {
            let rec = rec?;
            let row = rec
                .iter()
                .map(|s| s.trim().parse::<f64>())
                .collect::<Result<Vec<_>, _>>()
                .with_context(|| format!("row {} is not numeric", i + 1))?;
            if row.len() != columns.len() {
                bail!("row {} has {} fields, header has {}", i + 1, row.len(), columns.len());
            }
            rows.push(row);
        }
        Ok(Self { comments, columns, rows })
    }

    pub fn to_json_value(&self) -> Value {
        let records = self
            .rows
            .iter()
            .map(|row| {
                self.columns
                    .iter()
                    .zip(row)
                    .map(|(c, x)| (c.clone(), serde_json::Number::from_f64(*x).map_or(Value::Null, Value::Number)))
                    .collect()
            })
            .collect();
        serde_json::to_value(JsonTable { comments: self.comments.clone(), columns: self.columns.clone(), records })
            .expect("table serializes")
    }

    pub fn write_json(&self, path: &Path) -> anyhow::Result<()> {
        let file = File::create(path).with_context(|| format!("cannot write {}", path.display()))?;
        let mut out = BufWriter::new(file);
        serde_json::to_writer_pretty(&mut out, &self.to_json_value())?;
        writeln!(out)?;
        out.flush()?;
        Ok(())
    }

    pub fn from_json_str(text: &str) -> anyhow::Result<Self> {
        let t: JsonTable = serde_json::from_str(text)?;
        let mut rows = Vec::with_capacity(t.records.len());
        for (i, rec) in t.records.iter().enumerate() {
            let row = t
                .columns
                .iter()
                .map(|c| match rec.get(c) {
                    Some(Value::Number(n)) => n.as_f64().context("number out of range"),
                    Some(Value::Null) => Ok(f64::NAN),
                    _ => bail!("record {i} lacks numeric field `{c}`"),
                })
                .collect::<anyhow::Result<Vec<_>>>()?;
            rows.push(row);
        }
        Ok(Self { comments: t.comments, columns: t.columns, rows })
    }

    pub fn read_json(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
        Self::from_json_str(&text)
    }
}
