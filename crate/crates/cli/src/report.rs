//! Byte-stable JSON output and TSV side files.
//!
//! Object keys come out sorted because `serde_json::Map` is ordered. Floats are
//! printed in scientific notation with 17 significant digits, integers as
//! integers. Non-finite floats become `null` when converted to a JSON value.

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::Path;

use serde_json::Value;

pub const SCHEMA: &str = "qsd-lab/1";

fn write_value(out: &mut String, value: &Value, indent: usize) {
    match value {
        Value::Null => out.push_str("null"),
        Value::Bool(b) => out.push_str(if *b { "true" } else { "false" }),
        Value::Number(n) => {
            if let Some(i) = n.as_i64() {
                write!(out, "{i}").unwrap();
            } else if let Some(u) = n.as_u64() {
                write!(out, "{u}").unwrap();
            } else {
                write!(out, "{:.16e}", n.as_f64().unwrap_or(f64::NAN)).unwrap();
            }
        }
        Value::String(s) => out.push_str(&Value::String(s.clone()).to_string()),
        Value::Array(items) => {
            if items.is_empty() {
                out.push_str("[]");
                return;
            }
            out.push('[');
            for (k, item) in items.iter().enumerate() {
                if k > 0 {
                    out.push(',');
                }
                newline(out, indent + 1);
                write_value(out, item, indent + 1);
            }
            newline(out, indent);
            out.push(']');
        }
        Value::Object(map) => {
            if map.is_empty() {
                out.push_str("{}");
                return;
            }
            out.push('{');
            for (k, (key, item)) in map.iter().enumerate() {
                if k > 0 {
                    out.push(',');
                }
                newline(out, indent + 1);
                out.push_str(&Value::String(key.clone()).to_string());
                out.push_str(": ");
                write_value(out, item, indent + 1);
            }
            newline(out, indent);
            out.push('}');
        }
    }
}

fn newline(out: &mut String, indent: usize) {
    out.push('\n');
    for _ in 0..indent {
        out.push_str("  ");
    }
}

/// Canonical text of a report, with a trailing newline.
pub fn to_canonical_string(value: &Value) -> String {
    let mut out = String::new();
    write_value(&mut out, value, 0);
    out.push('\n');
    out
}

/// One decay curve as `n<TAB>j<TAB>value` rows under a header.
#[derive(Debug, Clone, PartialEq)]
pub struct TsvCurve {
    pub name: String,
    pub rows: Vec<(usize, usize, f64)>,
}

impl TsvCurve {
    pub fn from_table(name: &str, table: &[Vec<f64>], first_n: usize) -> TsvCurve {
        let rows = table
            .iter()
            .enumerate()
            .flat_map(|(n, row)| row.iter().enumerate().map(move |(j, &v)| (n + first_n, j, v)))
            .collect();
        TsvCurve { name: name.to_string(), rows }
    }

    pub fn write(&self, dir: &Path) -> std::io::Result<()> {
        std::fs::create_dir_all(dir)?;
        let mut file = std::io::BufWriter::new(std::fs::File::create(dir.join(format!("{}.tsv", self.name)))?);
        writeln!(file, "n\tj\tvalue")?;
        for (n, j, v) in &self.rows {
            writeln!(file, "{n}\t{j}\t{v:.16e}")?;
        }
        file.flush()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn canonical_form() {
        let v = json!({"b": 1, "a": [0.5, -2], "c": {"z": null, "y": "q\""}, "d": [], "e": 1.0});
        let text = to_canonical_string(&v);
        let expected = "{\n  \"a\": [\n    5.0000000000000000e-1,\n    -2\n  ],\n  \"b\": 1,\n  \"c\": {\n    \"y\": \"q\\\"\",\n    \"z\": null\n  },\n  \"d\": [],\n  \"e\": 1.0000000000000000e0\n}\n";
        assert_eq!(text, expected);
        let parsed: Value = serde_json::from_str(&text).unwrap();
        assert_eq!(parsed["a"][0], 0.5);
    }

    #[test]
    fn round_trips_floats_exactly() {
        for x in [0.1, 1.0 / 3.0, std::f64::consts::PI, 1e-300, 6.02e23] {
            let text = to_canonical_string(&json!(x));
            assert_eq!(text.trim().parse::<f64>().unwrap(), x);
        }
    }
}
