//! Rendering of command results as CSV or JSON, and atomic file output.

use std::io::Write;
use std::path::Path;

use clap::ValueEnum;
use serde::Serialize;
use serde_json::{Map, Value};
use swcrt::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    /// Six significant digits.
    #[value(name = "6")]
    #[serde(rename = "6")]
    Six,
    /// Shortest representation that round-trips.
    Full,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    F(f64),
    U(usize),
    S(String),
    B(bool),
    Empty,
}

impl From<f64> for Cell {
    fn from(v: f64) -> Self {
        Cell::F(v)
    }
}

impl From<usize> for Cell {
    fn from(v: usize) -> Self {
        Cell::U(v)
    }
}

impl From<i64> for Cell {
    fn from(v: i64) -> Self {
        Cell::S(v.to_string())
    }
}

impl From<&str> for Cell {
    fn from(v: &str) -> Self {
        Cell::S(v.to_string())
    }
}

impl From<String> for Cell {
    fn from(v: String) -> Self {
        Cell::S(v)
    }
}

impl From<bool> for Cell {
    fn from(v: bool) -> Self {
        Cell::B(v)
    }
}

impl<T: Into<Cell>> From<Option<T>> for Cell {
    fn from(v: Option<T>) -> Self {
        v.map(Into::into).unwrap_or(Cell::Empty)
    }
}

#[derive(Debug, Clone, Default)]
pub struct Table {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Cell>>,
}

impl Table {
    pub fn new(columns: &[&str]) -> Self {
        Self {
            columns: columns.iter().map(|c| c.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<Cell>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    fn to_json(&self) -> Value {
        Value::Array(
            self.rows
                .iter()
                .map(|r| {
                    let obj: Map<String, Value> = self
                        .columns
                        .iter()
                        .zip(r)
                        .map(|(c, v)| {
                            let v = match v {
                                Cell::F(x) => float_value(*x),
                                Cell::U(u) => Value::from(*u),
                                Cell::S(s) => Value::from(s.as_str()),
                                Cell::B(b) => Value::from(*b),
                                Cell::Empty => Value::Null,
                            };
                            (c.clone(), v)
                        })
                        .collect();
                    Value::Object(obj)
                })
                .collect(),
        )
    }
}

/// What a command hands back: a table for CSV and, optionally, a richer
/// structure for JSON.
pub struct Output {
    pub table: Table,
    pub json: Option<Value>,
}

impl Output {
    pub fn table(table: Table) -> Self {
        Self { table, json: None }
    }

    pub fn with_json<T: Serialize>(table: Table, value: &T) -> Result<Self> {
        Ok(Self {
            table,
            json: Some(serde_json::to_value(value)?),
        })
    }
}

fn float_value(x: f64) -> Value {
    serde_json::Number::from_f64(x).map(Value::Number).unwrap_or(Value::Null)
}

/// `%g`-style formatting with `digits` significant digits.
pub fn format_sig(x: f64, digits: usize) -> String {
    if !x.is_finite() {
        return if x.is_nan() { "NaN".into() } else if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if x == 0.0 {
        return "0".into();
    }
    let sci = format!("{:.*e}", digits - 1, x);
    let (mantissa, exp) = sci.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    if exp < -4 || exp >= digits as i32 {
        format!("{}e{}{:02}", trim(mantissa), if exp < 0 { '-' } else { '+' }, exp.abs())
    } else {
        let decimals = (digits as i32 - 1 - exp).max(0) as usize;
        trim(&format!("{:.*}", decimals, x)).to_string()
    }
}

fn trim(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

pub fn format_float(x: f64, precision: Precision) -> String {
    match precision {
        Precision::Six => format_sig(x, 6),
        Precision::Full => {
            if x.is_finite() {
                format!("{x:?}")
            } else {
                format_sig(x, 6)
            }
        }
    }
}

/// Rounds every float in `v` the way the CSV writer would print it.
fn round_json(v: &mut Value, precision: Precision) {
    match v {
        Value::Number(n) if precision == Precision::Six && n.is_f64() => {
            let x = n.as_f64().expect("f64 number");
            let r: f64 = format_sig(x, 6).parse().unwrap_or(x);
            *v = float_value(r);
        }
        Value::Array(a) => a.iter_mut().for_each(|x| round_json(x, precision)),
        Value::Object(o) => o.values_mut().for_each(|x| round_json(x, precision)),
        _ => {}
    }
}

pub fn render(out: &Output, config: &Value, format: Format, precision: Precision) -> Result<Vec<u8>> {
    match format {
        Format::Csv => render_csv(&out.table, config, precision),
        Format::Json => {
            let mut result = out.json.clone().unwrap_or_else(|| out.table.to_json());
            round_json(&mut result, precision);
            let doc = serde_json::json!({ "config": config, "result": result });
            let mut bytes = serde_json::to_vec_pretty(&doc)?;
            bytes.push(b'\n');
            Ok(bytes)
        }
    }
}

pub fn config_line(config: &Value) -> Result<String> {
    Ok(format!("# config: {}\n", serde_json::to_string(config)?))
}

fn render_csv(table: &Table, config: &Value, precision: Precision) -> Result<Vec<u8>> {
    let mut buf = config_line(config)?.into_bytes();
    {
        let mut w = csv::Writer::from_writer(&mut buf);
        w.write_record(&table.columns)?;
        for row in &table.rows {
            w.write_record(row.iter().map(|c| match c {
                Cell::F(x) => format_float(*x, precision),
                Cell::U(u) => u.to_string(),
                Cell::S(s) => s.clone(),
                Cell::B(b) => b.to_string(),
                Cell::Empty => String::new(),
            }))?;
        }
        w.flush()?;
    }
    Ok(buf)
}

/// Writes `bytes` to `path` through a temporary file in the same directory.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}

pub fn emit(path: Option<&Path>, bytes: &[u8]) -> Result<()> {
    match path {
        Some(p) => write_atomic(p, bytes),
        None => {
            let stdout = std::io::stdout();
            let mut lock = stdout.lock();
            lock.write_all(bytes)?;
            lock.flush()?;
            Ok(())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn six_significant_digits() {
        assert_eq!(format_sig(0.8001234567, 6), "0.800123");
        assert_eq!(format_sig(-0.576, 6), "-0.576");
        assert_eq!(format_sig(1234567.0, 6), "1.23457e+06");
        assert_eq!(format_sig(0.0000123456789, 6), "1.23457e-05");
        assert_eq!(format_sig(100.0, 6), "100");
        assert_eq!(format_sig(999999.5, 6), "1e+06");
        assert_eq!(format_sig(0.0, 6), "0");
    }

    #[test]
    fn full_precision_round_trips() {
        let x = 0.1 + 0.2;
        let s = format_float(x, Precision::Full);
        assert_eq!(s.parse::<f64>().unwrap(), x);
    }
}
