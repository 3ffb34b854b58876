//! Theory grid arguments: a JSON file, an inline JSON object, or a compact
//! `key=v1,v2;key=v3` cartesian list.

use std::path::Path;

use ris_lab::experiments::TheoryGrid;
use ris_lab::Error;
use serde_json::Value;

const KEYS: &str = "N, F_r_db, Q, sigma_q2, user, b";

fn bad(reason: impl Into<String>) -> Error {
    Error::Config {
        key: "grid".into(),
        reason: reason.into(),
    }
}

fn numbers(key: &str, value: &Value) -> Result<Vec<f64>, Error> {
    let items = match value {
        Value::Array(items) => items.clone(),
        other => vec![other.clone()],
    };
    items
        .iter()
        .map(|v| match v {
            Value::Number(n) => n.as_f64().ok_or_else(|| bad(format!("{key}: {n} is not representable"))),
            Value::String(s) => s.trim().parse().map_err(|_| bad(format!("{key}: {s:?} is not a number"))),
            other => Err(bad(format!("{key}: expected numbers, got {other}"))),
        })
        .collect()
}

fn counts(key: &str, values: &[f64]) -> Result<Vec<usize>, Error> {
    values
        .iter()
        .map(|&v| {
            if v >= 0.0 && v.fract() == 0.0 && v <= u32::MAX as f64 {
                Ok(v as usize)
            } else {
                Err(bad(format!("{key}: {v} is not a whole number")))
            }
        })
        .collect()
}

fn single(key: &str, values: &[f64]) -> Result<usize, Error> {
    match counts(key, values)?.as_slice() {
        [v] => Ok(*v),
        _ => Err(bad(format!("{key} takes a single value"))),
    }
}

fn apply(grid: &mut TheoryGrid, key: &str, value: &Value) -> Result<(), Error> {
    let v = numbers(key, value)?;
    if v.is_empty() {
        return Err(bad(format!("{key} has no values")));
    }
    match key {
        "N" => grid.n = counts(key, &v)?,
        "F_r_db" | "F_r" => grid.f_r_db = v,
        "Q" => grid.q = counts(key, &v)?,
        "sigma_q2" => grid.sigma_q2 = v,
        "user" => grid.user = single(key, &v)?,
        "b" => grid.phase_bits = single(key, &v)? as u32,
        other => return Err(bad(format!("unknown key {other:?} (expected {KEYS})"))),
    }
    Ok(())
}

fn from_json(grid: &mut TheoryGrid, text: &str) -> Result<(), Error> {
    let value: Value = serde_json::from_str(text).map_err(|e| bad(format!("not valid JSON: {e}")))?;
    let Value::Object(map) = value else {
        return Err(bad("expected a JSON object"));
    };
    for (k, v) in &map {
        apply(grid, k, v)?;
    }
    Ok(())
}

fn from_compact(grid: &mut TheoryGrid, text: &str) -> Result<(), Error> {
    for part in text.split(';').map(str::trim).filter(|p| !p.is_empty()) {
        let (key, list) = part
            .split_once('=')
            .ok_or_else(|| bad(format!("{part:?} is not key=values")))?;
        let items: Vec<Value> = list.split(',').map(|s| Value::String(s.to_string())).collect();
        apply(grid, key.trim(), &Value::Array(items))?;
    }
    Ok(())
}

/// Overlays the grid argument onto `grid`.
pub fn parse_grid(arg: &str, grid: &mut TheoryGrid) -> Result<(), Error> {
    let trimmed = arg.trim();
    if trimmed.starts_with('{') {
        from_json(grid, trimmed)
    } else if Path::new(trimmed).is_file() {
        let text = std::fs::read_to_string(trimmed).map_err(|e| Error::Io {
            path: trimmed.into(),
            source: e,
        })?;
        from_json(grid, &text)
    } else if trimmed.contains('=') {
        from_compact(grid, trimmed)
    } else {
        Err(bad(format!("{trimmed:?} is neither a file, a JSON object nor key=values")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ris_lab::channel::ScenarioConfig;

    fn base() -> TheoryGrid {
        TheoryGrid::new(ScenarioConfig::reference())
    }

    #[test]
    fn compact_and_json_forms_agree() {
        let mut a = base();
        parse_grid("N=16,64; F_r_db=60; Q=1,2,4", &mut a).unwrap();
        let mut b = base();
        parse_grid(r#"{"N": [16, 64], "F_r_db": 60, "Q": [1, 2, 4]}"#, &mut b).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.n, vec![16, 64]);
        assert_eq!(a.q, vec![1, 2, 4]);
        assert_eq!(a.sigma_q2, base().sigma_q2);
    }

    #[test]
    fn grid_from_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("g.json");
        std::fs::write(&path, r#"{"Q": [8], "sigma_q2": [0, 1e-9]}"#).unwrap();
        let mut g = base();
        parse_grid(path.to_str().unwrap(), &mut g).unwrap();
        assert_eq!(g.q, vec![8]);
        assert_eq!(g.sigma_q2, vec![0.0, 1e-9]);
    }

    #[test]
    fn malformed_grids_are_rejected() {
        for arg in ["N=abc", "{not json", "banana", "Q=1.5", "depth=3", "user=1,2", r#"{"N": [true]}"#] {
            assert!(parse_grid(arg, &mut base()).is_err(), "{arg}");
        }
    }
}
