//! Flat `key = value` settings files.
//!
//! Keys are `section.field`, where the section is `gan`, `clf`,
//! `experiment` or `sweep` and the field is a field name of the matching
//! config struct. Lists are comma separated. `#` starts a comment. Unknown
//! keys are errors.

use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::classifier::ClfConfig;
use crate::error::{Error, Result};
use crate::experiment::{ExperimentConfig, SweepSpec};
use crate::gan::GanConfig;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Settings {
    pub gan: GanConfig,
    pub clf: ClfConfig,
    pub experiment: ExperimentConfig,
    pub sweep: SweepSpec,
}

fn parse_scalar(raw: &str, like: &Value, key: &str) -> Result<Value> {
    let bad = || Error::Config(format!("{key}: cannot parse `{raw}`"));
    Ok(match like {
        Value::Bool(_) => Value::Bool(raw.parse().map_err(|_| bad())?),
        Value::Number(n) if n.is_u64() => Value::from(raw.parse::<u64>().map_err(|_| bad())?),
        Value::Number(n) if n.is_i64() => Value::from(raw.parse::<i64>().map_err(|_| bad())?),
        Value::Number(_) => Value::from(raw.parse::<f64>().map_err(|_| bad())?),
        Value::String(_) => Value::String(raw.to_string()),
        _ => {
            if let Ok(v) = raw.parse::<u64>() {
                Value::from(v)
            } else if let Ok(v) = raw.parse::<f64>() {
                Value::from(v)
            } else {
                Value::String(raw.to_string())
            }
        }
    })
}

fn parse_value(raw: &str, like: &Value, key: &str) -> Result<Value> {
    match like {
        Value::Array(items) => {
            let proto = items.first().cloned().unwrap_or(Value::Null);
            let parts = raw
                .split(',')
                .map(str::trim)
                .filter(|s| !s.is_empty())
                .map(|s| parse_scalar(s, &proto, key))
                .collect::<Result<Vec<_>>>()?;
            Ok(Value::Array(parts))
        }
        _ => parse_scalar(raw, like, key),
    }
}

impl Settings {
    pub fn parse(text: &str) -> Result<Self> {
        let mut root = serde_json::to_value(Settings::default())?;
        let sections: &mut Map<String, Value> = root.as_object_mut().expect("settings serialize to an object");
        for (lineno, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, raw) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", lineno + 1)))?;
            let (key, raw) = (key.trim(), raw.trim());
            let (section, field) = key
                .split_once('.')
                .ok_or_else(|| Error::Config(format!("unknown key `{key}` (expected section.field)")))?;
            let fields = sections
                .get_mut(section)
                .and_then(Value::as_object_mut)
                .ok_or_else(|| Error::Config(format!("unknown key `{key}`")))?;
            let slot = fields
                .get_mut(field)
                .ok_or_else(|| Error::Config(format!("unknown key `{key}`")))?;
            *slot = parse_value(raw, slot, key)?;
        }
        serde_json::from_value(root).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingFile(path.to_path_buf()));
        }
        Self::parse(&std::fs::read_to_string(path)?)
    }

    /// Sets every section's seed.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.gan.seed = seed;
        self.clf.seed = seed;
        self.experiment.seed = seed;
        self.sweep.seed = seed;
        self
    }

    /// Renders every key with its current value, in the accepted syntax.
    pub fn to_flat(&self) -> String {
        let root = serde_json::to_value(self).expect("settings serialize");
        let mut out = String::new();
        for (section, fields) in root.as_object().expect("object") {
            for (field, v) in fields.as_object().expect("object") {
                let text = match v {
                    Value::Array(items) => items.iter().map(scalar_text).collect::<Vec<_>>().join(","),
                    other => scalar_text(other),
                };
                out.push_str(&format!("{section}.{field} = {text}\n"));
            }
        }
        out
    }
}

fn scalar_text(v: &Value) -> String {
    match v {
        Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overrides_and_lists() {
        let s = Settings::parse(
            "# toy\n gan.batch_size = 8\nclf.lr=0.001\n gan.grayscale = true\nexperiment.tasks = 1, 4\n gan.gen_channels = 32,16 # hidden\nsweep.steps = 4:3,1:1\n",
        )
        .unwrap();
        assert_eq!(s.gan.batch_size, 8);
        assert_eq!(s.clf.lr, 0.001);
        assert!(s.gan.grayscale);
        assert_eq!(s.experiment.tasks, vec![1, 4]);
        assert_eq!(s.gan.gen_channels, vec![32, 16]);
        assert_eq!(s.sweep.steps, vec!["4:3", "1:1"]);
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(matches!(Settings::parse("gan.nope = 1"), Err(Error::Config(_))));
        assert!(matches!(Settings::parse("model.batch_size = 1"), Err(Error::Config(_))));
        assert!(matches!(Settings::parse("batch_size = 1"), Err(Error::Config(_))));
        assert!(Settings::parse("gan.batch_size = x").is_err());
        assert!(Settings::parse("gan.batch_size").is_err());
    }

    #[test]
    fn flat_round_trip() {
        let s = Settings::default().with_seed(9);
        assert_eq!(Settings::parse(&s.to_flat()).unwrap(), s);
    }
}
