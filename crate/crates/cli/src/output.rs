//! Record sinks: CSV with comment-line config/summary, or JSON lines.

use std::io::Write;

use clap::ValueEnum;
use serde::Serialize;
use serde_json::{Map, Value};

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Format {
    Csv,
    JsonLines,
}

/// A row type with a fixed column order.
pub trait Record: Serialize {
    const COLUMNS: &'static [&'static str];
}

fn tagged(kind: &str, value: Value) -> Value {
    let mut map = Map::new();
    map.insert("record".into(), Value::String(kind.into()));
    match value {
        Value::Object(fields) => map.extend(fields),
        other => {
            map.insert("value".into(), other);
        }
    }
    Value::Object(map)
}

/// Writes the config header, one row per record, then the summary.
pub fn emit_records<W: Write, R: Record>(
    out: &mut W,
    format: Format,
    config: &Value,
    records: &[R],
    summary: Option<&Value>,
) -> std::io::Result<()> {
    match format {
        Format::Csv => {
            writeln!(out, "# config {}", serde_json::to_string(config)?)?;
            {
                let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(&mut *out);
                w.write_record(R::COLUMNS)?;
                for r in records {
                    w.serialize(r)?;
                }
                w.flush()?;
            }
            if let Some(s) = summary {
                writeln!(out, "# summary {}", serde_json::to_string(s)?)?;
            }
        }
        Format::JsonLines => {
            writeln!(out, "{}", serde_json::to_string(&tagged("config", config.clone()))?)?;
            for r in records {
                writeln!(out, "{}", serde_json::to_string(&tagged("trial", serde_json::to_value(r)?))?)?;
            }
            if let Some(s) = summary {
                writeln!(out, "{}", serde_json::to_string(&tagged("summary", s.clone()))?)?;
            }
        }
    }
    out.flush()
}
