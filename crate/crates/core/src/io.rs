//! Chain specifications in dense CSV or edge-list JSON.
//!
//! CSV: a header row of labels followed by one row of probabilities per state.
//! JSON: `{"states": [...], "transitions": [[from, to, p], ...]}` with optional
//! `tolerances`, `v_weights` and `metadata`. Probabilities may be numbers or
//! decimal strings; both are converted to `f64` exactly once, here.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::Path;

use serde::Deserialize;
use serde_json::Value;

use crate::chain::{AbsorbedKernel, CyclicStructure};
use crate::error::{Error, Result};
use crate::linalg::Matrix;

#[derive(Debug, Clone, PartialEq)]
pub struct ChainSpec {
    pub kernel: AbsorbedKernel,
    pub tolerances: BTreeMap<String, f64>,
    /// `V` keyed by label; states not listed default to 1.
    pub v_weights: BTreeMap<String, f64>,
    pub metadata: Option<Value>,
}

fn parse_error(location: impl Into<String>, message: impl Into<String>) -> Error {
    Error::Parse { location: location.into(), message: message.into() }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct JsonSpec {
    states: Vec<String>,
    transitions: Vec<(String, String, Value)>,
    #[serde(default)]
    tolerances: BTreeMap<String, f64>,
    #[serde(default)]
    v_weights: BTreeMap<String, Value>,
    #[serde(default)]
    metadata: Option<Value>,
}

fn probability(value: &Value, location: &str) -> Result<f64> {
    let parsed = match value {
        Value::Number(n) => n.as_f64(),
        Value::String(s) => s.trim().parse::<f64>().ok(),
        _ => None,
    };
    parsed.ok_or_else(|| parse_error(location, format!("expected a number, found {value}")))
}

fn parse_json(text: &str) -> Result<ChainSpec> {
    let spec: JsonSpec = serde_json::from_str(text)
        .map_err(|e| parse_error(format!("line {}, column {}", e.line(), e.column()), e.to_string()))?;
    let mut index: HashMap<&str, usize> = HashMap::new();
    for (i, label) in spec.states.iter().enumerate() {
        if index.insert(label.as_str(), i).is_some() {
            return Err(Error::DuplicateLabel(label.clone()));
        }
    }
    let n = spec.states.len();
    let mut matrix = Matrix::zeros(n, n);
    let mut seen = HashSet::new();
    for (k, (from, to, p)) in spec.transitions.iter().enumerate() {
        let location = format!("transitions[{k}]");
        let lookup = |label: &str| {
            index.get(label).copied().ok_or_else(|| parse_error(&location, format!("unknown state `{label}`")))
        };
        let (i, j) = (lookup(from)?, lookup(to)?);
        if !seen.insert((i, j)) {
            return Err(parse_error(&location, format!("duplicate transition {from} -> {to}")));
        }
        matrix[(i, j)] = probability(p, &location)?;
    }
    let mut v_weights = BTreeMap::new();
    for (label, value) in &spec.v_weights {
        let location = format!("v_weights.{label}");
        if !index.contains_key(label.as_str()) {
            return Err(parse_error(&location, format!("unknown state `{label}`")));
        }
        v_weights.insert(label.clone(), probability(value, &location)?);
    }
    let kernel = AbsorbedKernel::from_matrix(matrix, spec.states)?;
    Ok(ChainSpec { kernel, tolerances: spec.tolerances, v_weights, metadata: spec.metadata })
}

fn parse_csv(text: &str) -> Result<ChainSpec> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(text.as_bytes());
    let labels: Vec<String> = reader
        .headers()
        .map_err(|e| parse_error("line 1", e.to_string()))?
        .iter()
        .map(str::to_string)
        .collect();
    let n = labels.len();
    let mut data = Vec::with_capacity(n * n);
    let mut rows = 0;
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            parse_error(format!("line {line}"), e.to_string())
        })?;
        let line = record.position().map_or(0, |p| p.line());
        if record.len() != n {
            return Err(parse_error(format!("line {line}"), format!("expected {n} fields, found {}", record.len())));
        }
        for (field, raw) in record.iter().enumerate() {
            let value = raw
                .parse::<f64>()
                .map_err(|_| parse_error(format!("line {line}, field {}", field + 1), format!("`{raw}` is not a number")))?;
            data.push(value);
        }
        rows += 1;
    }
    if rows != n {
        return Err(parse_error(format!("line {}", rows + 2), format!("expected {n} rows, found {rows}")));
    }
    let kernel = AbsorbedKernel::from_matrix(Matrix::from_row_major(n, n, data), labels)?;
    Ok(ChainSpec { kernel, tolerances: BTreeMap::new(), v_weights: BTreeMap::new(), metadata: None })
}

/// Parses JSON when the first non-blank character is `{`, CSV otherwise.
pub fn parse_chain_spec(text: &str) -> Result<ChainSpec> {
    if text.trim_start().starts_with('{') { parse_json(text) } else { parse_csv(text) }
}

pub fn read_chain_spec(path: &Path) -> Result<ChainSpec> {
    let text = std::fs::read_to_string(path).map_err(|e| parse_error(path.display().to_string(), e.to_string()))?;
    parse_chain_spec(&text)
}

/// A JSON object mapping labels to `V` values.
pub fn parse_v_weights(text: &str) -> Result<BTreeMap<String, f64>> {
    let raw: BTreeMap<String, Value> = serde_json::from_str(text)
        .map_err(|e| parse_error(format!("line {}, column {}", e.line(), e.column()), e.to_string()))?;
    raw.iter().map(|(label, value)| Ok((label.clone(), probability(value, label)?))).collect()
}

/// `V` on `A_0` in increasing state order; states outside `A_0` are ignored.
pub fn v_on_first_class(kernel: &AbsorbedKernel, cyclic: &CyclicStructure, weights: &BTreeMap<String, f64>) -> Result<Vec<f64>> {
    for label in weights.keys() {
        if kernel.index_of(label).is_none() {
            return Err(parse_error(format!("v_weights.{label}"), format!("unknown state `{label}`")));
        }
    }
    Ok(cyclic
        .members(0)
        .iter()
        .map(|&x| weights.get(&kernel.states()[x]).copied().unwrap_or(1.0))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instances;

    #[test]
    fn json_and_csv_agree() {
        let json = r#"{"states":["a","b"],"transitions":[["a","b",0.8],["b","a","0.5"]]}"#;
        let csv = "a,b\n0,0.8\n0.5,0\n";
        let expected = instances::two_cycle(0.8, 0.5);
        assert_eq!(parse_chain_spec(json).unwrap().kernel, expected);
        assert_eq!(parse_chain_spec(csv).unwrap().kernel, expected);
    }

    #[test]
    fn duplicate_edge_is_located() {
        let json = r#"{"states":["a","b"],"transitions":[["a","b",0.5],["b","a",0.5],["a","b",0.3]]}"#;
        match parse_chain_spec(json) {
            Err(Error::Parse { location, .. }) => assert_eq!(location, "transitions[2]"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn csv_errors_are_located() {
        match parse_chain_spec("a,b\n0,x\n0.5,0\n") {
            Err(Error::Parse { location, .. }) => assert_eq!(location, "line 2, field 2"),
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(parse_chain_spec("a,b\n0,0.8\n"), Err(Error::Parse { .. })));
        assert!(matches!(parse_chain_spec("a,b\n0.5,0.6\n0,0\n"), Err(Error::RowSumExceedsOne { .. })));
    }

    #[test]
    fn extras_and_weights() {
        let json = r#"{"states":["a","b"],"transitions":[["a","b",0.8],["b","a",0.5]],
            "tolerances":{"qsd":1e-8},"v_weights":{"a":2.0},"metadata":{"name":"two"}}"#;
        let spec = parse_chain_spec(json).unwrap();
        assert_eq!(spec.tolerances["qsd"], 1e-8);
        let cyclic = crate::periodicity::detect_cyclic_structure(&spec.kernel).unwrap();
        assert_eq!(v_on_first_class(&spec.kernel, &cyclic, &spec.v_weights).unwrap(), vec![2.0]);
        assert!(matches!(parse_chain_spec(r#"{"states":["a"],"transitions":[["a","z",1]]}"#), Err(Error::Parse { .. })));
        assert_eq!(parse_v_weights(r#"{"b": 3}"#).unwrap()["b"], 3.0);
    }
}
