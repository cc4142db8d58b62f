//! Long-format panel CSV (`unit,variable,year,value`) and its column mapping.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use impactkit_core::panel::ValidationReport;
use impactkit_core::{Panel, PanelBuilder};
use serde::{Deserialize, Serialize};

use crate::error::{AppError, AppResult};

/// Column names and number conventions of a panel file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SchemaMapping {
    pub unit: String,
    pub variable: String,
    pub year: String,
    pub value: String,
    pub delimiter: char,
    /// Decimal separator of the value column, `.` or `,`.
    pub decimal: char,
    /// Unit-of-measure tag per variable.
    pub measures: BTreeMap<String, String>,
}

impl Default for SchemaMapping {
    fn default() -> Self {
        SchemaMapping {
            unit: "unit".into(),
            variable: "variable".into(),
            year: "year".into(),
            value: "value".into(),
            delimiter: ',',
            decimal: '.',
            measures: BTreeMap::new(),
        }
    }
}

impl SchemaMapping {
    pub fn from_file(path: &Path) -> AppResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| AppError::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| AppError::Config { path: path.into(), message: e.to_string() })
    }
}

fn parse_value(raw: &str, decimal: char) -> Option<f64> {
    let s = raw.trim();
    let s = if decimal == ',' { s.replace('.', "").replace(',', ".") } else { s.to_string() };
    match s.to_ascii_lowercase().as_str() {
        "nan" | "inf" | "+inf" | "-inf" | "infinity" | "-infinity" => return Some(f64::NAN),
        _ => {}
    }
    s.parse().ok()
}

/// Reads a panel from any reader; `origin` labels error messages.
pub fn read_panel_from<R: Read>(
    reader: R,
    origin: &Path,
    schema: &SchemaMapping,
) -> AppResult<(Panel, ValidationReport)> {
    let parse_err = |line: u64, message: String| AppError::Parse { path: origin.to_path_buf(), line, message };
    let mut rdr = csv::ReaderBuilder::new()
        .delimiter(schema.delimiter as u8)
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr.headers().map_err(|e| parse_err(1, e.to_string()))?.clone();
    if headers.is_empty() {
        return Err(parse_err(1, "empty file".into()));
    }
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| parse_err(1, format!("missing column `{name}`")))
    };
    let (cu, cv, cy, cx) = (col(&schema.unit)?, col(&schema.variable)?, col(&schema.year)?, col(&schema.value)?);
    let mut builder = PanelBuilder::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            parse_err(line, e.to_string())
        })?;
        let line = rec.position().map_or(0, |p| p.line());
        let field = |i: usize| rec.get(i).ok_or_else(|| parse_err(line, format!("missing field {}", i + 1)));
        let unit = field(cu)?;
        let variable = field(cv)?;
        if unit.is_empty() || variable.is_empty() {
            return Err(parse_err(line, "empty unit or variable".into()));
        }
        let year: i32 = field(cy)?.parse().map_err(|_| parse_err(line, format!("bad year `{}`", field(cy).unwrap_or(""))))?;
        let raw = field(cx)?;
        let value = parse_value(raw, schema.decimal).ok_or_else(|| parse_err(line, format!("bad value `{raw}`")))?;
        builder.push(unit, variable, year, value).map_err(|e| parse_err(line, e.to_string()))?;
    }
    if builder.is_empty() {
        return Err(parse_err(1, "no data rows".into()));
    }
    for (var, measure) in &schema.measures {
        builder.set_measure(var, measure);
    }
    Ok(builder.build()?)
}

pub fn read_panel(path: &Path, schema: &SchemaMapping) -> AppResult<(Panel, ValidationReport)> {
    let file = File::open(path).map_err(|e| AppError::io(path, e))?;
    read_panel_from(file, path, schema)
}

/// Writes the canonical CSV; numbers use Rust's shortest round-trip format.
pub fn write_panel<W: Write>(panel: &Panel, out: W) -> std::io::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["unit", "variable", "year", "value"])?;
    for (u, v, y, x) in panel.observations() {
        w.write_record([u, v, &y.to_string(), &x.to_string()])?;
    }
    w.flush()
}

pub fn write_panel_file(panel: &Panel, path: &Path) -> AppResult<()> {
    let f = File::create(path).map_err(|e| AppError::io(path, e))?;
    write_panel(panel, f).map_err(|e| AppError::io(path, e))
}

/// Location of the bundled snapshot inside the source tree.
pub fn bundled_snapshot() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("data").join("chile_snapshot.csv")
}
