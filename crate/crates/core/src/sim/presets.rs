//! Shipped simulation presets and the `preset` inclusion rule for configs.
//!
//! A config object may name a preset under the key `"preset"`; its remaining
//! keys are merged recursively over the preset's values.

use serde_json::Value;

use crate::error::{PtzError, Result};

pub const PRESETS: &[(&str, &str)] = &[
    (
        "table1_seq1",
        include_str!("../../presets/table1_seq1.json"),
    ),
    (
        "table1_seq2",
        include_str!("../../presets/table1_seq2.json"),
    ),
    (
        "table1_seq3",
        include_str!("../../presets/table1_seq3.json"),
    ),
    (
        "table1_seq4",
        include_str!("../../presets/table1_seq4.json"),
    ),
    ("reloc_3600", include_str!("../../presets/reloc_3600.json")),
    (
        "soccer_zoom",
        include_str!("../../presets/soccer_zoom.json"),
    ),
];

pub fn preset_names() -> impl Iterator<Item = &'static str> {
    PRESETS.iter().map(|(n, _)| *n)
}

pub fn preset(name: &str) -> Result<Value> {
    let text = PRESETS
        .iter()
        .find(|(n, _)| *n == name)
        .map(|(_, t)| *t)
        .ok_or_else(|| {
            PtzError::InvalidInput(format!(
                "unknown preset `{name}` (known: {})",
                preset_names().collect::<Vec<_>>().join(", ")
            ))
        })?;
    Ok(serde_json::from_str(text)?)
}

/// Recursively overlays `patch` onto `base`; non-object values replace.
pub fn merge(base: &mut Value, patch: Value) {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                merge(b.entry(k).or_insert(Value::Null), v);
            }
        }
        (b, p) => *b = p,
    }
}

/// Expands a top-level `"preset"` key, if present.
pub fn resolve(config: Value) -> Result<Value> {
    let Value::Object(mut map) = config else {
        return Ok(config);
    };
    match map.remove("preset") {
        None => Ok(Value::Object(map)),
        Some(Value::String(name)) => {
            let mut base = resolve(preset(&name)?)?;
            merge(&mut base, Value::Object(map));
            Ok(base)
        }
        Some(_) => Err(PtzError::InvalidInput("`preset` must be a string".into())),
    }
}
