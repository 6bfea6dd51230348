//! JSON config files with dotted-path `key=value` overrides.

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::Value;

use crate::error::{Error, Result};

/// Read `path` (or start from defaults), apply overrides, and return both
/// the typed config and its fully expanded JSON form.
pub fn load<T: Serialize + DeserializeOwned + Default>(path: Option<&Path>, overrides: &[String]) -> Result<(T, Value)> {
    let base: T = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?
        }
        None => T::default(),
    };
    let mut value = serde_json::to_value(&base).expect("config serializes");
    for o in overrides {
        apply_override(&mut value, o)?;
    }
    let typed = serde_json::from_value(value.clone()).map_err(|e| Error::Config(format!("after overrides: {e}")))?;
    // re-serialize so the effective config is canonical
    let value = serde_json::to_value(&typed).expect("config serializes");
    Ok((typed, value))
}

/// Apply one `a.b.c=value` override. The path must already exist; the value
/// is parsed as JSON and falls back to a plain string.
pub fn apply_override(root: &mut Value, spec: &str) -> Result<()> {
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| Error::Usage(format!("override `{spec}` is not key=value")))?;
    let mut node = root;
    for part in key.split('.') {
        node = match node {
            Value::Object(map) => map.get_mut(part),
            Value::Array(items) => part.parse::<usize>().ok().and_then(move |i| items.get_mut(i)),
            _ => None,
        }
        .ok_or_else(|| Error::Usage(format!("unknown config key `{key}`")))?;
    }
    *node = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    Ok(())
}

/// Set a top-level key that is known to exist.
pub fn set(root: &mut Value, key: &str, v: Value) -> Result<()> {
    apply_override(root, &format!("{key}={v}"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn nested_override() {
        let mut v = json!({"a": {"b": 1, "c": [1, 2]}, "name": "x"});
        apply_override(&mut v, "a.b=2.5").unwrap();
        apply_override(&mut v, "a.c.1=7").unwrap();
        apply_override(&mut v, "name=hello").unwrap();
        assert_eq!(v, json!({"a": {"b": 2.5, "c": [1, 7]}, "name": "hello"}));
    }

    #[test]
    fn unknown_key_is_usage_error() {
        let mut v = json!({"a": 1});
        assert!(matches!(apply_override(&mut v, "b=1"), Err(Error::Usage(_))));
        assert!(matches!(apply_override(&mut v, "a"), Err(Error::Usage(_))));
    }
}
