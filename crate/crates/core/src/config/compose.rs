use std::path::{Path, PathBuf};

use super::{parse_value, parse_yaml, ConfigNode, Mapping};
use crate::error::{Error, IoContext, Result};

const DEFAULTS: &str = "defaults";
const SELF_ENTRY: &str = "_self_";

pub fn load_file(path: &Path) -> Result<ConfigNode> {
    let text = std::fs::read_to_string(path).at(path)?;
    parse_yaml(&text)
}

/// Reads an entry config. Its own directory is searched for group files
/// after any explicitly given config dirs.
pub fn load_entry(path: &Path, extra_dirs: &[PathBuf]) -> Result<(ConfigNode, Vec<PathBuf>)> {
    let node = load_file(path)?;
    let mut dirs = extra_dirs.to_vec();
    if let Some(parent) = path.parent() {
        let parent = if parent.as_os_str().is_empty() {
            PathBuf::from(".")
        } else {
            parent.to_path_buf()
        };
        if !dirs.contains(&parent) {
            dirs.push(parent);
        }
    }
    Ok((node, dirs))
}

/// Resolves the `defaults` list of `entry` depth-first against the group
/// files under `config_dirs`.
///
/// Each default `group: name` loads `<dir>/<group>/<name>.yaml` from the
/// first dir that has it and places the result under `group` (slashes nest).
/// Sources merge in declaration order; the entry's own keys go where
/// `_self_` appears, or last when it does not.
pub fn compose(entry: &ConfigNode, config_dirs: &[PathBuf]) -> Result<ConfigNode> {
    let mut stack = vec!["<entry>".to_string()];
    compose_node(entry, config_dirs, &mut stack, &[])
}

/// Composition with command-line overrides. An override whose path names a
/// group of the entry's defaults list swaps the selected file; every other
/// override is applied to the composed tree.
pub fn compose_with_overrides(
    entry: &ConfigNode,
    config_dirs: &[PathBuf],
    overrides: &[String],
) -> Result<ConfigNode> {
    let groups = default_groups(entry)?;
    let mut selections = Vec::new();
    let mut rest = Vec::new();
    for assignment in overrides {
        let (path, value) = split_assignment(assignment)?;
        let path = path.trim_start_matches('+');
        if groups.iter().any(|g| g == path) {
            let name = match parse_value(value)? {
                ConfigNode::Str(s) => Some(s),
                ConfigNode::Null => None,
                other => Some(other.canonical()),
            };
            selections.push((path.to_string(), name));
        } else {
            rest.push(assignment.clone());
        }
    }
    let mut stack = vec!["<entry>".to_string()];
    let mut cfg = compose_node(entry, config_dirs, &mut stack, &selections)?;
    for assignment in &rest {
        cfg = apply_override(&cfg, assignment)?;
    }
    Ok(cfg)
}

pub(super) fn split_assignment(assignment: &str) -> Result<(&str, &str)> {
    let (path, value) = assignment
        .split_once('=')
        .ok_or_else(|| Error::BadOverride(assignment.to_string()))?;
    let path = path.trim();
    if path.is_empty() || path == "+" {
        return Err(Error::BadOverride(assignment.to_string()));
    }
    Ok((path, value.trim()))
}

/// Sets the value at a dotted path: `a.b.c=value`. The path must exist
/// unless prefixed with `+`, which creates missing mappings on the way.
pub fn apply_override(cfg: &ConfigNode, assignment: &str) -> Result<ConfigNode> {
    let (path, value) = split_assignment(assignment)?;
    let (create, path) = match path.strip_prefix('+') {
        Some(p) => (true, p),
        None => (false, path),
    };
    let value = parse_value(value)?;
    let mut out = cfg.clone();
    let segments: Vec<&str> = path.split('.').collect();
    let mut node = &mut out;
    for (depth, seg) in segments.iter().enumerate() {
        let last = depth + 1 == segments.len();
        node = match node {
            ConfigNode::Map(map) => {
                if !map.contains_key(*seg) {
                    if !create {
                        return Err(Error::PathNotFound(path.to_string()));
                    }
                    map.insert(seg.to_string(), ConfigNode::empty_map());
                }
                map.get_mut(*seg).expect("inserted above")
            }
            ConfigNode::Seq(items) => {
                let idx = seg
                    .parse::<usize>()
                    .ok()
                    .filter(|&i| i < items.len())
                    .ok_or_else(|| Error::PathNotFound(path.to_string()))?;
                &mut items[idx]
            }
            _ => {
                return Err(Error::NotAContainer(segments[..depth].join(".")));
            }
        };
        if last {
            *node = value;
            break;
        }
    }
    Ok(out)
}

fn default_groups(entry: &ConfigNode) -> Result<Vec<String>> {
    let Some(defaults) = entry.get(DEFAULTS) else {
        return Ok(Vec::new());
    };
    Ok(parse_defaults(defaults)?
        .into_iter()
        .filter_map(|d| match d {
            DefaultEntry::Group { group, .. } => Some(group),
            DefaultEntry::SelfEntry => None,
        })
        .collect())
}

enum DefaultEntry {
    SelfEntry,
    Group { group: String, name: Option<String> },
}

fn parse_defaults(node: &ConfigNode) -> Result<Vec<DefaultEntry>> {
    let items = node
        .as_seq()
        .ok_or_else(|| Error::config(DEFAULTS, "must be a sequence"))?;
    items
        .iter()
        .map(|item| match item {
            ConfigNode::Str(s) if s == SELF_ENTRY => Ok(DefaultEntry::SelfEntry),
            ConfigNode::Map(m) if m.len() == 1 => {
                let (group, name) = m.iter().next().expect("len checked");
                let name = match name {
                    ConfigNode::Null => None,
                    ConfigNode::Str(s) => Some(s.clone()),
                    other => Some(other.canonical()),
                };
                Ok(DefaultEntry::Group {
                    group: group.clone(),
                    name,
                })
            }
            other => Err(Error::config(
                DEFAULTS,
                format!(
                    "entries must be `group: name` or `{SELF_ENTRY}`, got {}",
                    other.canonical()
                ),
            )),
        })
        .collect()
}

fn compose_node(
    node: &ConfigNode,
    dirs: &[PathBuf],
    stack: &mut Vec<String>,
    selections: &[(String, Option<String>)],
) -> Result<ConfigNode> {
    let ConfigNode::Map(map) = node else {
        return Ok(node.clone());
    };
    let Some(defaults) = map.get(DEFAULTS) else {
        return Ok(node.clone());
    };
    let entries = parse_defaults(defaults)?;
    let own: Mapping = map
        .iter()
        .filter(|(k, _)| k.as_str() != DEFAULTS)
        .map(|(k, v)| (k.clone(), v.clone()))
        .collect();

    let mut result = ConfigNode::empty_map();
    let mut self_merged = false;
    for entry in entries {
        match entry {
            DefaultEntry::SelfEntry => {
                result.merge(ConfigNode::Map(own.clone()));
                self_merged = true;
            }
            DefaultEntry::Group { group, name } => {
                let name = selections
                    .iter()
                    .find(|(g, _)| *g == group)
                    .map(|(_, n)| n.clone())
                    .unwrap_or(name);
                let Some(name) = name else { continue };
                let key = format!("{group}/{name}");
                if stack.contains(&key) {
                    let mut cycle = stack[1..].to_vec();
                    cycle.push(key);
                    return Err(Error::IncludeCycle(cycle));
                }
                let file = find_group_file(dirs, &group, &name)?;
                let loaded = load_file(&file)?;
                stack.push(key);
                let child = compose_node(&loaded, dirs, stack, &[])?;
                stack.pop();
                result.merge(nest_under(&group, child));
            }
        }
    }
    if !self_merged {
        result.merge(ConfigNode::Map(own));
    }
    Ok(result)
}

fn find_group_file(dirs: &[PathBuf], group: &str, name: &str) -> Result<PathBuf> {
    let searched: Vec<PathBuf> = dirs
        .iter()
        .map(|d| d.join(group).join(format!("{name}.yaml")))
        .collect();
    searched
        .iter()
        .find(|p| p.is_file())
        .cloned()
        .ok_or_else(|| Error::MissingGroup {
            group: group.to_string(),
            name: name.to_string(),
            searched,
        })
}

fn nest_under(group: &str, node: ConfigNode) -> ConfigNode {
    group.rsplit('/').fold(node, |inner, seg| {
        let mut m = Mapping::new();
        m.insert(seg.to_string(), inner);
        ConfigNode::Map(m)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::fs;

    fn write(dir: &Path, rel: &str, text: &str) {
        let path = dir.join(rel);
        fs::create_dir_all(path.parent().unwrap()).unwrap();
        fs::write(path, text).unwrap();
    }

    fn fixture() -> tempfile::TempDir {
        let dir = tempfile::tempdir().unwrap();
        write(dir.path(), "dataset/toytones.yaml", "id: toytones\nclasses: 4\nroot: data\n");
        write(dir.path(), "model/ffnn.yaml", "id: ffnn\nhidden: [32]\n");
        write(dir.path(), "model/cnn10lite.yaml", "id: cnn10lite\nchannels: [16, 32, 64]\n");
        dir
    }

    fn entry(text: &str) -> ConfigNode {
        parse_yaml(text).unwrap()
    }

    #[test]
    fn composes_groups_under_their_keys() {
        let dir = fixture();
        let cfg = compose(
            &entry("defaults:\n  - dataset: toytones\n  - model: ffnn\nseed: 1\n"),
            &[dir.path().to_path_buf()],
        )
        .unwrap();
        assert_eq!(
            cfg.canonical(),
            r#"{"dataset":{"classes":4,"id":"toytones","root":"data"},"model":{"hidden":[32],"id":"ffnn"},"seed":1}"#
        );
        assert!(cfg.get("defaults").is_none());
    }

    #[test]
    fn entry_keys_win_by_default() {
        let dir = fixture();
        let cfg = compose(
            &entry("defaults:\n  - model: ffnn\nmodel:\n  hidden: 64\n"),
            &[dir.path().to_path_buf()],
        )
        .unwrap();
        assert_eq!(cfg.get("model.hidden"), Some(&ConfigNode::Int(64)));
        assert_eq!(cfg.get("model.id"), Some(&ConfigNode::from("ffnn")));
    }

    #[test]
    fn self_position_is_honored() {
        let dir = fixture();
        let cfg = compose(
            &entry("defaults:\n  - _self_\n  - model: ffnn\nmodel:\n  hidden: 64\n"),
            &[dir.path().to_path_buf()],
        )
        .unwrap();
        assert_eq!(cfg.get("model.hidden").unwrap().canonical(), "[32]");
    }

    #[test]
    fn missing_group_lists_searched_paths() {
        let dir = fixture();
        let other = tempfile::tempdir().unwrap();
        let err = compose(
            &entry("defaults:\n  - model: missing\n"),
            &[dir.path().to_path_buf(), other.path().to_path_buf()],
        )
        .unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains(&dir.path().join("model/missing.yaml").display().to_string()));
        assert!(msg.contains(&other.path().join("model/missing.yaml").display().to_string()));
    }

    #[test]
    fn first_dir_wins() {
        let a = fixture();
        let b = tempfile::tempdir().unwrap();
        write(b.path(), "model/ffnn.yaml", "id: other\n");
        let cfg = compose(
            &entry("defaults:\n  - model: ffnn\n"),
            &[b.path().to_path_buf(), a.path().to_path_buf()],
        )
        .unwrap();
        assert_eq!(cfg.get("model.id"), Some(&ConfigNode::from("other")));
    }

    #[test]
    fn include_cycle_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        write(dir.path(), "a/x.yaml", "defaults:\n  - b: y\n");
        write(dir.path(), "b/y.yaml", "defaults:\n  - a: x\n");
        let err = compose(&entry("defaults:\n  - a: x\n"), &[dir.path().to_path_buf()]).unwrap_err();
        match err {
            Error::IncludeCycle(cycle) => assert_eq!(cycle, vec!["a/x", "b/y", "a/x"]),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn nested_defaults_and_slash_groups() {
        let dir = tempfile::tempdir().unwrap();
        write(dir.path(), "model/base.yaml", "defaults:\n  - model/head: small\nid: base\n");
        write(dir.path(), "model/head/small.yaml", "width: 8\n");
        let cfg = compose(&entry("defaults:\n  - model: base\n"), &[dir.path().to_path_buf()]).unwrap();
        assert_eq!(cfg.canonical(), r#"{"model":{"id":"base","model":{"head":{"width":8}}}}"#);
    }

    #[test]
    fn composition_is_idempotent() {
        let dir = fixture();
        let dirs = [dir.path().to_path_buf()];
        let once = compose(&entry("defaults:\n  - model: ffnn\nseed: 1\n"), &dirs).unwrap();
        let twice = compose(&once, &dirs).unwrap();
        assert_eq!(once, twice);
    }

    #[test]
    fn group_override_swaps_file() {
        let dir = fixture();
        let cfg = compose_with_overrides(
            &entry("defaults:\n  - model: ffnn\nseed: 1\n"),
            &[dir.path().to_path_buf()],
            &["model=cnn10lite".to_string(), "seed=3".to_string()],
        )
        .unwrap();
        assert_eq!(cfg.get("model.id"), Some(&ConfigNode::from("cnn10lite")));
        assert_eq!(cfg.get("seed"), Some(&ConfigNode::Int(3)));
    }

    #[test]
    fn overrides() {
        let base = entry("lr: 0.01");
        assert_eq!(apply_override(&base, "lr=0.001").unwrap(), entry("lr: 0.001"));
        let nested = entry("m:\n  h: 64\n");
        assert_eq!(apply_override(&nested, "m.h=128").unwrap(), entry("m:\n  h: 128\n"));
        let err = apply_override(&ConfigNode::empty_map(), "lr=1").unwrap_err();
        assert_eq!(err.to_string(), "path not found: lr");
        assert_eq!(
            apply_override(&ConfigNode::empty_map(), "+a.b=1").unwrap(),
            entry("a:\n  b: 1\n")
        );
        assert!(matches!(
            apply_override(&entry("a: 1"), "a.b=2"),
            Err(Error::NotAContainer(p)) if p == "a"
        ));
        assert_eq!(
            apply_override(&entry("xs: [1, 2]"), "xs.1=5").unwrap(),
            entry("xs: [1, 5]")
        );
        assert!(matches!(apply_override(&base, "lr"), Err(Error::BadOverride(_))));
    }

    #[test]
    fn overrides_on_disjoint_paths_commute_with_composition() {
        let dir = fixture();
        let dirs = [dir.path().to_path_buf()];
        let e = entry("defaults:\n  - model: ffnn\n  - dataset: toytones\nseed: 1\n");
        let composed_then = apply_override(&compose(&e, &dirs).unwrap(), "dataset.classes=3").unwrap();
        let with = compose_with_overrides(&e, &dirs, &["dataset.classes=3".to_string()]).unwrap();
        assert_eq!(composed_then, with);
    }
}
