//! Configuration files and command-line overrides.

use serde::Deserialize;
use serde_json::{Map, Value};

use crate::RunError;

/// Top level of a `--config` file. Every field is optional; `params` holds
/// the experiment parameters and is checked against the experiment schema.
#[derive(Debug, Clone, Default, PartialEq, Deserialize, schemars::JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub experiment: Option<String>,
    pub seed: Option<u64>,
    pub workers: Option<usize>,
    pub params: Option<Map<String, Value>>,
}

impl ConfigFile {
    pub fn parse(text: &str) -> Result<Self, RunError> {
        serde_json::from_str(text).map_err(|e| RunError::Config(format!("config file: {e}")))
    }
}

/// Parses an override value: JSON when it parses, otherwise a string.
pub fn override_value(raw: &str) -> Value {
    serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()))
}

/// Sets `key` (dotted for nested objects) in `params`. Dashes in keys map to
/// underscores so that `--tube-scale` addresses `tube_scale`.
pub fn apply_override(params: &mut Map<String, Value>, key: &str, raw: &str) -> Result<(), RunError> {
    let key = key.replace('-', "_");
    let mut parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(RunError::Config(format!("malformed override key '{key}'")));
    }
    let last = parts.pop().expect("split yields at least one part");
    let mut cur = params;
    for p in parts {
        let next = cur.entry(p.to_string()).or_insert_with(|| Value::Object(Map::new()));
        cur = next
            .as_object_mut()
            .ok_or_else(|| RunError::Config(format!("override '{key}': '{p}' is not an object")))?;
    }
    cur.insert(last.to_string(), override_value(raw));
    Ok(())
}

/// Rewrites `--name value` and `--name=value` pairs that are not global flags
/// into `--set name=value`, so experiment parameters can be given directly.
/// A bare `--name` followed by another flag or nothing means `true`.
pub fn rewrite_overrides(args: Vec<String>, known: &[&str]) -> Vec<String> {
    let mut out = Vec::with_capacity(args.len());
    let mut it = args.into_iter().peekable();
    if let Some(bin) = it.next() {
        out.push(bin);
    }
    while let Some(a) = it.next() {
        if a == "--" {
            out.push(a);
            out.extend(it);
            break;
        }
        let Some(body) = a.strip_prefix("--") else {
            out.push(a);
            continue;
        };
        let (name, inline) = match body.split_once('=') {
            Some((n, v)) => (n.to_string(), Some(v.to_string())),
            None => (body.to_string(), None),
        };
        if known.contains(&name.as_str()) {
            out.push(a);
            continue;
        }
        let value = match inline {
            Some(v) => v,
            None => match it.peek() {
                Some(n) if !is_flag(n) => it.next().expect("peeked"),
                _ => "true".into(),
            },
        };
        out.push("--set".into());
        out.push(format!("{name}={value}"));
    }
    out
}

fn is_flag(s: &str) -> bool {
    s.starts_with("--") && s.len() > 2 && !s[2..].starts_with(|c: char| c.is_ascii_digit() || c == '.')
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(s: &[&str]) -> Vec<String> {
        s.iter().map(|x| x.to_string()).collect()
    }

    #[test]
    fn overrides_are_rewritten() {
        let known = ["seed", "check"];
        let out = rewrite_overrides(
            v(&[
                "bimlab",
                "run",
                "xi-estimate",
                "--lambda",
                "2",
                "--seed",
                "7",
                "--k=1",
                "--check",
                "--flag",
            ]),
            &known,
        );
        assert_eq!(
            out,
            v(&[
                "bimlab",
                "run",
                "xi-estimate",
                "--set",
                "lambda=2",
                "--seed",
                "7",
                "--set",
                "k=1",
                "--check",
                "--set",
                "flag=true"
            ])
        );
    }

    #[test]
    fn negative_values_are_values() {
        let out = rewrite_overrides(v(&["b", "--lo", "-3", "--x", "--1"]), &[]);
        assert_eq!(out, v(&["b", "--set", "lo=-3", "--set", "x=--1"]));
    }

    #[test]
    fn nested_override() {
        let mut m = Map::new();
        apply_override(&mut m, "a.b-c", "[1, 2]").unwrap();
        apply_override(&mut m, "name", "hello").unwrap();
        assert_eq!(
            Value::Object(m),
            serde_json::json!({"a": {"b_c": [1, 2]}, "name": "hello"})
        );
        let mut m = Map::new();
        apply_override(&mut m, "a", "1").unwrap();
        assert!(apply_override(&mut m, "a.b", "1").is_err());
        assert!(apply_override(&mut m, "a..b", "1").is_err());
    }

    #[test]
    fn config_rejects_unknown_keys() {
        assert!(ConfigFile::parse(r#"{"seed": 1, "sead": 2}"#).is_err());
        let c = ConfigFile::parse(r#"{"seed": 1, "params": {"k": 2}}"#).unwrap();
        assert_eq!(c.seed, Some(1));
    }
}
