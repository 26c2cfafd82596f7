//! Hierarchical configuration: a small YAML subset, defaults-list
//! composition, dotted-path overrides, Cartesian sweeps and run ids.

mod compose;
mod sweep;
mod yaml;

use std::fmt::Write as _;

use indexmap::IndexMap;
use serde::de::DeserializeOwned;

use crate::error::{Error, Result};
use crate::rng::fnv1a64;

pub use compose::{apply_override, compose, compose_with_overrides, load_entry, load_file};
pub use sweep::{expand_sweep, expand_sweep_with, parse_axis, SweepAxis, SweepPlan, SweepRun};
pub use yaml::{parse_value, parse_yaml};

pub type Mapping = IndexMap<String, ConfigNode>;

/// A node of a configuration tree.
#[derive(Debug, Clone, PartialEq, Default)]
pub enum ConfigNode {
    #[default]
    Null,
    Bool(bool),
    Int(i64),
    Float(f64),
    Str(String),
    Seq(Vec<ConfigNode>),
    Map(Mapping),
}

impl ConfigNode {
    pub fn empty_map() -> Self {
        ConfigNode::Map(Mapping::new())
    }

    pub fn as_map(&self) -> Option<&Mapping> {
        match self {
            ConfigNode::Map(m) => Some(m),
            _ => None,
        }
    }

    pub fn as_map_mut(&mut self) -> Option<&mut Mapping> {
        match self {
            ConfigNode::Map(m) => Some(m),
            _ => None,
        }
    }

    pub fn as_seq(&self) -> Option<&[ConfigNode]> {
        match self {
            ConfigNode::Seq(s) => Some(s),
            _ => None,
        }
    }

    pub fn as_str(&self) -> Option<&str> {
        match self {
            ConfigNode::Str(s) => Some(s),
            _ => None,
        }
    }

    pub fn as_f64(&self) -> Option<f64> {
        match *self {
            ConfigNode::Int(i) => Some(i as f64),
            ConfigNode::Float(f) => Some(f),
            _ => None,
        }
    }

    pub fn as_i64(&self) -> Option<i64> {
        match *self {
            ConfigNode::Int(i) => Some(i),
            _ => None,
        }
    }

    pub fn as_bool(&self) -> Option<bool> {
        match *self {
            ConfigNode::Bool(b) => Some(b),
            _ => None,
        }
    }

    pub fn is_null(&self) -> bool {
        matches!(self, ConfigNode::Null)
    }

    /// Looks up a dotted path. Numeric segments index into sequences.
    pub fn get(&self, path: &str) -> Option<&ConfigNode> {
        if path.is_empty() {
            return Some(self);
        }
        path.split('.').try_fold(self, |node, seg| match node {
            ConfigNode::Map(m) => m.get(seg),
            ConfigNode::Seq(s) => seg.parse::<usize>().ok().and_then(|i| s.get(i)),
            _ => None,
        })
    }

    /// Deep merge: mappings merge key by key, everything else is replaced
    /// by `other`.
    pub fn merge(&mut self, other: ConfigNode) {
        match (self, other) {
            (ConfigNode::Map(base), ConfigNode::Map(over)) => {
                for (k, v) in over {
                    match base.get_mut(&k) {
                        Some(existing) => existing.merge(v),
                        None => {
                            base.insert(k, v);
                        }
                    }
                }
            }
            (slot, other) => *slot = other,
        }
    }

    /// Canonical one-line serialization: sorted keys, JSON-quoted strings,
    /// integers in decimal and floats in shortest round-trip form.
    pub fn canonical(&self) -> String {
        let mut out = String::new();
        self.write_canonical(&mut out);
        out
    }

    fn write_canonical(&self, out: &mut String) {
        match self {
            ConfigNode::Null => out.push_str("null"),
            ConfigNode::Bool(b) => out.push_str(if *b { "true" } else { "false" }),
            ConfigNode::Int(i) => {
                let _ = write!(out, "{i}");
            }
            ConfigNode::Float(f) => out.push_str(&format_float(*f)),
            ConfigNode::Str(s) => out.push_str(&quote_json(s)),
            ConfigNode::Seq(items) => {
                out.push('[');
                for (i, item) in items.iter().enumerate() {
                    if i > 0 {
                        out.push(',');
                    }
                    item.write_canonical(out);
                }
                out.push(']');
            }
            ConfigNode::Map(m) => {
                let mut keys: Vec<&String> = m.keys().collect();
                keys.sort();
                out.push('{');
                for (i, k) in keys.into_iter().enumerate() {
                    if i > 0 {
                        out.push(',');
                    }
                    out.push_str(&quote_json(k));
                    out.push(':');
                    m[k].write_canonical(out);
                }
                out.push('}');
            }
        }
    }

    /// Block-style YAML that [`parse_yaml`] reads back to an equal tree.
    pub fn to_yaml(&self) -> String {
        yaml::emit(self)
    }

    /// Leaf values keyed by dotted path. Sequences are leaves rendered in
    /// canonical form.
    pub fn flatten(&self) -> Vec<(String, String)> {
        let mut out = Vec::new();
        flatten_into(self, String::new(), &mut out);
        out
    }

    pub fn to_json(&self) -> serde_json::Value {
        use serde_json::Value;
        match self {
            ConfigNode::Null => Value::Null,
            ConfigNode::Bool(b) => Value::Bool(*b),
            ConfigNode::Int(i) => Value::from(*i),
            ConfigNode::Float(f) => serde_json::Number::from_f64(*f)
                .map(Value::Number)
                .unwrap_or(Value::Null),
            ConfigNode::Str(s) => Value::String(s.clone()),
            ConfigNode::Seq(items) => Value::Array(items.iter().map(Self::to_json).collect()),
            ConfigNode::Map(m) => Value::Object(
                m.iter().map(|(k, v)| (k.clone(), v.to_json())).collect(),
            ),
        }
    }

    pub fn from_json(value: &serde_json::Value) -> Self {
        use serde_json::Value;
        match value {
            Value::Null => ConfigNode::Null,
            Value::Bool(b) => ConfigNode::Bool(*b),
            Value::Number(n) => match n.as_i64() {
                Some(i) => ConfigNode::Int(i),
                None => ConfigNode::Float(n.as_f64().unwrap_or(f64::NAN)),
            },
            Value::String(s) => ConfigNode::Str(s.clone()),
            Value::Array(items) => ConfigNode::Seq(items.iter().map(Self::from_json).collect()),
            Value::Object(m) => ConfigNode::Map(
                m.iter().map(|(k, v)| (k.clone(), Self::from_json(v))).collect(),
            ),
        }
    }

    /// Serializes a typed value into a tree.
    pub fn from_serialize<T: serde::Serialize>(value: &T) -> Result<Self> {
        Ok(Self::from_json(&serde_json::to_value(value)?))
    }

    /// Deserializes the subtree at `path` into a typed struct.
    pub fn extract<T: DeserializeOwned>(&self, path: &str) -> Result<T> {
        let node = self.get(path).unwrap_or(&ConfigNode::Null);
        serde_json::from_value(node.to_json()).map_err(|e| Error::config(path, e.to_string()))
    }
}

impl From<&str> for ConfigNode {
    fn from(s: &str) -> Self {
        ConfigNode::Str(s.to_string())
    }
}

impl From<i64> for ConfigNode {
    fn from(i: i64) -> Self {
        ConfigNode::Int(i)
    }
}

impl From<f64> for ConfigNode {
    fn from(f: f64) -> Self {
        ConfigNode::Float(f)
    }
}

impl From<bool> for ConfigNode {
    fn from(b: bool) -> Self {
        ConfigNode::Bool(b)
    }
}

impl std::str::FromStr for ConfigNode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        parse_yaml(s)
    }
}

/// Content-derived run identifier: FNV-1a 64 over the canonical form, as
/// 16 lowercase hex digits.
pub fn run_id(cfg: &ConfigNode) -> String {
    format!("{:016x}", fnv1a64(cfg.canonical().as_bytes()))
}

pub(crate) fn format_float(f: f64) -> String {
    if f.is_nan() {
        "nan".to_string()
    } else if f.is_infinite() {
        if f > 0.0 { "inf" } else { "-inf" }.to_string()
    } else {
        // Debug formatting is the shortest string that round-trips and
        // always carries a `.` or exponent.
        format!("{f:?}")
    }
}

pub(crate) fn quote_json(s: &str) -> String {
    serde_json::to_string(s).expect("string serialization cannot fail")
}

fn flatten_into(node: &ConfigNode, prefix: String, out: &mut Vec<(String, String)>) {
    match node {
        ConfigNode::Map(m) if !m.is_empty() => {
            for (k, v) in m {
                let key = if prefix.is_empty() {
                    k.clone()
                } else {
                    format!("{prefix}.{k}")
                };
                flatten_into(v, key, out);
            }
        }
        ConfigNode::Str(s) => out.push((prefix, s.clone())),
        other => out.push((prefix, other.canonical())),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(text: &str) -> ConfigNode {
        parse_yaml(text).unwrap()
    }

    #[test]
    fn run_id_ignores_key_order() {
        let a = cfg("a: 1\nb:\n  c: x\n  d: [1, 2]\n");
        let b = cfg("b:\n  d: [1, 2]\n  c: x\na: 1\n");
        assert_eq!(a.canonical(), b.canonical());
        assert_eq!(run_id(&a), run_id(&b));
    }

    #[test]
    fn run_id_distinguishes_values() {
        assert_ne!(run_id(&cfg("lr: 0.001")), run_id(&cfg("lr: 0.01")));
        assert_ne!(run_id(&cfg("lr: 1")), run_id(&cfg("lr: 1.0")));
    }

    #[test]
    fn empty_run_id_is_hash_of_braces() {
        let empty = ConfigNode::empty_map();
        assert_eq!(empty.canonical(), "{}");
        assert_eq!(run_id(&empty), "08f44b07b5901a25");
    }

    #[test]
    fn canonical_scalar_formats() {
        let c = cfg("a: 1e-3\nb: 2.0\nc: 10\nd: true\ne: ~\nf: 'x y'\ng: 1e300\n");
        assert_eq!(
            c.canonical(),
            r#"{"a":0.001,"b":2.0,"c":10,"d":true,"e":null,"f":"x y","g":1e300}"#
        );
    }

    #[test]
    fn merge_is_deep_for_maps_and_replaces_sequences() {
        let mut base = cfg("m:\n  a: 1\n  b: [1, 2, 3]\n");
        base.merge(cfg("m:\n  b: [9]\n  c: 3\n"));
        assert_eq!(base.canonical(), r#"{"m":{"a":1,"b":[9],"c":3}}"#);
    }

    #[test]
    fn flatten_uses_dotted_paths() {
        let c = cfg("a:\n  b: 1\n  c: [1, 2]\nd: x\n");
        assert_eq!(
            c.flatten(),
            vec![
                ("a.b".to_string(), "1".to_string()),
                ("a.c".to_string(), "[1,2]".to_string()),
                ("d".to_string(), "x".to_string()),
            ]
        );
    }

    #[test]
    fn get_walks_maps_and_sequences() {
        let c = cfg("a:\n  - x: 1\n  - x: 2\n");
        assert_eq!(c.get("a.1.x"), Some(&ConfigNode::Int(2)));
        assert_eq!(c.get("a.2.x"), None);
    }
}
