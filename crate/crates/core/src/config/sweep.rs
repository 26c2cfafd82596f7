use std::collections::HashSet;

use super::compose::{apply_override, split_assignment};
use super::{run_id, ConfigNode};
use crate::error::{Error, Result};

/// One sweep dimension: a dotted path and the values it takes.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepAxis {
    pub path: String,
    pub values: Vec<String>,
}

impl SweepAxis {
    pub fn assignments(&self) -> impl Iterator<Item = String> + '_ {
        self.values.iter().map(|v| format!("{}={}", self.path, v))
    }
}

/// Parses `path=v1,v2,...`. Commas inside brackets or quotes do not split,
/// and a lone integer range `a..b` expands inclusively.
pub fn parse_axis(text: &str) -> Result<SweepAxis> {
    let (path, values) = split_assignment(text)?;
    let values = split_top_level(values);
    if values.is_empty() {
        return Err(Error::EmptySweepAxis(path.to_string()));
    }
    let values = match values.as_slice() {
        [single] => expand_range(single).unwrap_or_else(|| values.clone()),
        _ => values,
    };
    Ok(SweepAxis {
        path: path.to_string(),
        values,
    })
}

fn split_top_level(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut depth = 0i32;
    let mut quote: Option<char> = None;
    let mut current = String::new();
    for c in text.chars() {
        match quote {
            Some(q) => {
                if c == q {
                    quote = None;
                }
                current.push(c);
            }
            None => match c {
                '"' | '\'' => {
                    quote = Some(c);
                    current.push(c);
                }
                '[' | '{' => {
                    depth += 1;
                    current.push(c);
                }
                ']' | '}' => {
                    depth -= 1;
                    current.push(c);
                }
                ',' if depth == 0 => out.push(std::mem::take(&mut current)),
                _ => current.push(c),
            },
        }
    }
    out.push(current);
    let out: Vec<String> = out.into_iter().map(|v| v.trim().to_string()).collect();
    if out.iter().all(String::is_empty) {
        Vec::new()
    } else {
        out
    }
}

fn expand_range(text: &str) -> Option<Vec<String>> {
    let (lo, hi) = text.split_once("..")?;
    let lo: i64 = lo.trim().parse().ok()?;
    let hi: i64 = hi.trim().parse().ok()?;
    (lo <= hi).then(|| (lo..=hi).map(|v| v.to_string()).collect())
}

#[derive(Debug, Clone)]
pub struct SweepRun {
    /// The `path=value` assignments of this grid point, one per axis.
    pub overrides: Vec<String>,
    pub config: ConfigNode,
    pub run_id: String,
    /// Set when an earlier run in the plan composed to the same config.
    pub duplicate: bool,
}

#[derive(Debug, Clone)]
pub struct SweepPlan {
    pub runs: Vec<SweepRun>,
}

impl SweepPlan {
    pub fn len(&self) -> usize {
        self.runs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.runs.is_empty()
    }

    pub fn run_ids(&self) -> Vec<&str> {
        self.runs.iter().map(|r| r.run_id.as_str()).collect()
    }
}

/// Expands the Cartesian product of `axes` over an already composed config.
pub fn expand_sweep(cfg: &ConfigNode, axes: &[String]) -> Result<SweepPlan> {
    expand_sweep_with(axes, |overrides| {
        overrides
            .iter()
            .try_fold(cfg.clone(), |acc, o| apply_override(&acc, o))
    })
}

/// Expands the Cartesian product of `axes`, building each grid point's
/// config with `build`. The first axis varies slowest.
pub fn expand_sweep_with<F>(axes: &[String], mut build: F) -> Result<SweepPlan>
where
    F: FnMut(&[String]) -> Result<ConfigNode>,
{
    let axes: Vec<SweepAxis> = axes.iter().map(|a| parse_axis(a)).collect::<Result<_>>()?;
    let total: usize = axes.iter().map(|a| a.values.len()).product();
    let mut seen = HashSet::new();
    let mut runs = Vec::with_capacity(total);
    for index in 0..total {
        let mut overrides = vec![String::new(); axes.len()];
        let mut rem = index;
        for (slot, axis) in overrides.iter_mut().zip(&axes).rev() {
            let n = axis.values.len();
            *slot = format!("{}={}", axis.path, axis.values[rem % n]);
            rem /= n;
        }
        let config = build(&overrides)?;
        let run_id = run_id(&config);
        let duplicate = !seen.insert(run_id.clone());
        runs.push(SweepRun {
            overrides,
            config,
            run_id,
            duplicate,
        });
    }
    Ok(SweepPlan { runs })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::parse_yaml;

    fn base() -> ConfigNode {
        parse_yaml("lr: 0.01\nseed: 1\nmodel: ffnn\n").unwrap()
    }

    #[test]
    fn two_by_three() {
        let plan = expand_sweep(&base(), &["lr=0.01,0.001".into(), "seed=1,2,3".into()]).unwrap();
        assert_eq!(plan.len(), 6);
        let order: Vec<_> = plan.runs.iter().map(|r| r.overrides.join(" ")).collect();
        assert_eq!(order[0], "lr=0.01 seed=1");
        assert_eq!(order[1], "lr=0.01 seed=2");
        assert_eq!(order[3], "lr=0.001 seed=1");
        let ids: HashSet<_> = plan.run_ids().into_iter().collect();
        assert_eq!(ids.len(), 6);
    }

    #[test]
    fn thirty_runs_with_range() {
        let plan = expand_sweep(
            &base(),
            &[
                "model=ffnn,cnn10lite".into(),
                "lr=1e-2,1e-3,1e-4".into(),
                "seed=1..5".into(),
            ],
        )
        .unwrap();
        assert_eq!(plan.len(), 30);
        assert!(plan.runs.iter().all(|r| !r.duplicate));
    }

    #[test]
    fn duplicates_are_flagged() {
        let plan = expand_sweep(&base(), &["lr=0.01,0.01".into()]).unwrap();
        assert_eq!(plan.len(), 2);
        assert_eq!(plan.runs[0].run_id, plan.runs[1].run_id);
        assert_eq!(plan.runs[0].run_id, run_id(&base()));
        assert!(!plan.runs[0].duplicate);
        assert!(plan.runs[1].duplicate);
    }

    #[test]
    fn empty_axis_is_an_error() {
        assert!(matches!(
            expand_sweep(&base(), &["lr=".into()]),
            Err(Error::EmptySweepAxis(p)) if p == "lr"
        ));
    }

    #[test]
    fn no_axes_is_a_single_run() {
        let plan = expand_sweep(&base(), &[]).unwrap();
        assert_eq!(plan.len(), 1);
        assert_eq!(plan.runs[0].config, base());
    }

    #[test]
    fn brackets_do_not_split() {
        let axis = parse_axis("model.hidden=[32, 16],[64]").unwrap();
        assert_eq!(axis.values, vec!["[32, 16]", "[64]"]);
        let axis = parse_axis("name='a,b',c").unwrap();
        assert_eq!(axis.values, vec!["'a,b'", "c"]);
    }
}
