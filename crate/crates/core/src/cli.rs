//! Command-line entrypoint.
//!
//! ```text
//! audpipe fetch       [-cn FILE] [-cd DIR]... [-o DIR] [OVERRIDE|SWEEP]...
//! audpipe preprocess  [-cn FILE] [-cd DIR]... [-o DIR] [OVERRIDE|SWEEP]...
//! audpipe train       [-cn FILE] [-cd DIR]... [-o DIR] [--plan] [OVERRIDE|SWEEP]...
//! audpipe postprocess [-o DIR] [--ignore KEY]... [RUNS_DIR]
//! audpipe inference   --run RUN_DIR [--checkpoint best|last|DIR] [--window S] [--hop S] [-o DIR] INPUT...
//! ```
//!
//! Exit codes: 0 success, 1 usage error, 2 config error, 3 runtime failure.

use std::collections::BTreeSet;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::config::{compose_with_overrides, expand_sweep_with, load_entry, SweepPlan};
use crate::error::{Error, Result};
use crate::inference::{run_inference, Predictor};
use crate::postprocess::{aggregate, collect_runs, summarize};
use crate::train::{data, run_dir, train, RunSettings};

pub const OUTPUT_ENV: &str = "AUDPIPE_OUTPUT";
pub const DEFAULT_CONFIG: &str = "conf/config.yaml";
pub const POSTPROCESS_DIR: &str = "postprocess";
pub const INFERENCE_DIR: &str = "inference";

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_RUNTIME: i32 = 3;

const USAGE: &str = "usage: audpipe <fetch|preprocess|train|postprocess|inference> [options] [overrides]";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Fetch,
    Preprocess,
    Train,
    Postprocess,
    Inference,
}

impl std::str::FromStr for Command {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "fetch" => Command::Fetch,
            "preprocess" => Command::Preprocess,
            "train" => Command::Train,
            "postprocess" => Command::Postprocess,
            "inference" => Command::Inference,
            other => return Err(Error::Usage(format!("unknown subcommand `{other}`\n{USAGE}"))),
        })
    }
}

/// A parsed command line.
#[derive(Debug, Clone, PartialEq)]
pub struct Invocation {
    pub command: Command,
    pub config: PathBuf,
    pub config_dirs: Vec<PathBuf>,
    pub output: PathBuf,
    pub plan: bool,
    /// `path=value` overrides; comma lists and `a..b` ranges are sweep axes.
    pub overrides: Vec<String>,
    pub positional: Vec<PathBuf>,
    pub ignore: Vec<String>,
    pub run: Option<PathBuf>,
    pub checkpoint: String,
    pub window: Option<f64>,
    pub hop: Option<f64>,
}

impl Invocation {
    /// Parses arguments after the program name. `default_output` applies
    /// when `-o` is absent.
    pub fn parse(args: &[String], default_output: PathBuf) -> Result<Self> {
        let (command, rest) = args.split_first().ok_or_else(|| Error::Usage(USAGE.into()))?;
        let command: Command = command.parse()?;
        let mut inv = Invocation {
            command,
            config: PathBuf::from(DEFAULT_CONFIG),
            config_dirs: Vec::new(),
            output: default_output,
            plan: false,
            overrides: Vec::new(),
            positional: Vec::new(),
            ignore: Vec::new(),
            run: None,
            checkpoint: "best".into(),
            window: None,
            hop: None,
        };
        let composes = matches!(command, Command::Fetch | Command::Preprocess | Command::Train);
        let mut it = rest.iter();
        while let Some(arg) = it.next() {
            let mut value = |flag: &str| {
                it.next()
                    .cloned()
                    .ok_or_else(|| Error::Usage(format!("flag `{flag}` needs a value")))
            };
            match arg.as_str() {
                "-o" => inv.output = value(arg)?.into(),
                "-cn" if composes => inv.config = value(arg)?.into(),
                "-cd" if composes => inv.config_dirs.push(value(arg)?.into()),
                "--plan" if command == Command::Train => inv.plan = true,
                "--ignore" if command == Command::Postprocess => inv
                    .ignore
                    .extend(value(arg)?.split(',').map(str::trim).filter(|s| !s.is_empty()).map(String::from)),
                "--run" if command == Command::Inference => inv.run = Some(value(arg)?.into()),
                "--checkpoint" if command == Command::Inference => inv.checkpoint = value(arg)?,
                "--window" if command == Command::Inference => inv.window = Some(seconds(arg, &value(arg)?)?),
                "--hop" if command == Command::Inference => inv.hop = Some(seconds(arg, &value(arg)?)?),
                flag if flag.starts_with('-') && flag.len() > 1 && !flag.contains('=') => {
                    return Err(Error::Usage(format!("unknown flag `{flag}` for {arg_cmd}", arg_cmd = args[0])))
                }
                other if composes => {
                    if !other.contains('=') {
                        return Err(Error::Usage(format!("expected `path=value`, got `{other}`")));
                    }
                    inv.overrides.push(other.to_string());
                }
                other => inv.positional.push(other.into()),
            }
        }
        match command {
            Command::Inference if inv.run.is_none() => Err(Error::Usage("inference needs --run <run_dir>".into())),
            Command::Inference if inv.positional.is_empty() => Err(Error::Usage("inference needs an input path".into())),
            Command::Inference if inv.hop.is_some() && inv.window.is_none() => {
                Err(Error::Usage("--hop needs --window".into()))
            }
            Command::Postprocess if inv.positional.len() > 1 => {
                Err(Error::Usage("postprocess takes at most one runs directory".into()))
            }
            _ => Ok(inv),
        }
    }

    /// Composes every grid point of the sweep.
    pub fn plan(&self) -> Result<SweepPlan> {
        let (entry, dirs) = load_entry(&self.config, &self.config_dirs)?;
        expand_sweep_with(&self.overrides, |o| compose_with_overrides(&entry, &dirs, o))
    }
}

fn seconds(flag: &str, text: &str) -> Result<f64> {
    text.parse()
        .ok()
        .filter(|v: &f64| v.is_finite() && *v > 0.0)
        .ok_or_else(|| Error::Usage(format!("`{flag}` needs a positive number of seconds, got `{text}`")))
}

/// Runs a command line and returns its exit code. Reports go to stdout,
/// errors to stderr.
pub fn dispatch(args: &[String]) -> i32 {
    let default_output = std::env::var_os(OUTPUT_ENV).map(PathBuf::from).unwrap_or_else(|| ".".into());
    run(args, default_output, &mut std::io::stdout().lock(), &mut std::io::stderr().lock())
}

/// [`dispatch`] with explicit streams and output default.
pub fn run(args: &[String], default_output: PathBuf, out: &mut dyn Write, err: &mut dyn Write) -> i32 {
    let inv = match Invocation::parse(args, default_output) {
        Ok(inv) => inv,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            return EXIT_USAGE;
        }
    };
    let result = match inv.command {
        Command::Fetch | Command::Preprocess | Command::Train => compose_and_run(&inv, out, err),
        Command::Postprocess => postprocess(&inv, out),
        Command::Inference => inference(&inv, out, err),
    };
    match result {
        Ok(code) => code,
        Err(Failure { code, error }) => {
            let _ = writeln!(err, "error: {error}");
            code
        }
    }
}

struct Failure {
    code: i32,
    error: String,
}

impl Failure {
    fn config(path: &Path, e: Error) -> Self {
        Failure {
            code: EXIT_CONFIG,
            error: format!("{}: {e}", path.display()),
        }
    }

    fn runtime(e: Error) -> Self {
        Failure {
            code: code_of(&e),
            error: e.to_string(),
        }
    }
}

fn code_of(e: &Error) -> i32 {
    match e {
        Error::Usage(_) => EXIT_USAGE,
        e if e.is_config_error() => EXIT_CONFIG,
        _ => EXIT_RUNTIME,
    }
}

type Outcome = std::result::Result<i32, Failure>;

fn compose_and_run(inv: &Invocation, out: &mut dyn Write, err: &mut dyn Write) -> Outcome {
    let cfg_path = &inv.config;
    let plan = inv.plan().map_err(|e| Failure::config(cfg_path, e))?;
    if inv.command == Command::Train {
        for r in &plan.runs {
            RunSettings::from_config(&r.config).map_err(|e| Failure::config(cfg_path, e))?;
        }
    }
    if inv.plan {
        for r in &plan.runs {
            let note = if r.duplicate { "  (duplicate)" } else { "" };
            let _ = writeln!(out, "{}  {}{note}", r.run_id, r.overrides.join(" "));
        }
        return Ok(EXIT_OK);
    }
    match inv.command {
        Command::Fetch | Command::Preprocess => {
            // Runs of a sweep usually share one dataset; handle each root once.
            let mut done = BTreeSet::new();
            for r in &plan.runs {
                let root = data::dataset_root(&r.config, &inv.output).map_err(|e| Failure::config(cfg_path, e))?;
                let key = (root.clone(), r.config.get("dataset.transforms").map(|t| t.canonical()));
                if !done.insert(key) {
                    continue;
                }
                if inv.command == Command::Fetch {
                    let m = data::fetch(&r.config, &inv.output).map_err(Failure::runtime)?;
                    let _ = writeln!(out, "fetched {} items into {}", m.rows.len(), m.root.display());
                } else {
                    match data::preprocess(&r.config, &inv.output).map_err(Failure::runtime)? {
                        Some(rep) => {
                            let _ = writeln!(
                                out,
                                "preprocessed {}: {} written, {} cached",
                                root.display(),
                                rep.written,
                                rep.skipped
                            );
                        }
                        None => {
                            let _ = writeln!(out, "no offline transforms for {}", root.display());
                        }
                    }
                }
            }
            Ok(EXIT_OK)
        }
        _ => {
            let mut code = EXIT_OK;
            for r in plan.runs.iter().filter(|r| !r.duplicate) {
                match train(&r.config, &inv.output) {
                    Ok(rec) => {
                        let _ = writeln!(
                            out,
                            "{}  best epoch {} {}  {}",
                            rec.run_id,
                            rec.best_epoch,
                            crate::train::format6(rec.best_value),
                            rec.run_dir.display()
                        );
                    }
                    Err(e) => {
                        let dir = run_dir(&r.config, &inv.output).map(|d| d.display().to_string()).unwrap_or_default();
                        let _ = writeln!(err, "error: run {} ({dir}): {e}", r.run_id);
                        code = code.max(code_of(&e));
                    }
                }
            }
            Ok(code)
        }
    }
}

fn postprocess(inv: &Invocation, out: &mut dyn Write) -> Outcome {
    let runs_dir = inv.positional.first().cloned().unwrap_or_else(|| inv.output.join("runs"));
    let summaries = collect_runs(&runs_dir).map_err(Failure::runtime)?;
    let groups = aggregate(&summaries, &inv.ignore).map_err(Failure::runtime)?;
    let dest = inv.output.join(POSTPROCESS_DIR);
    let board = summarize(&summaries, &groups, &dest).map_err(Failure::runtime)?;
    let _ = write!(out, "{board}");
    let _ = writeln!(out, "{} runs, {} groups -> {}", summaries.len(), groups.len(), dest.display());
    Ok(EXIT_OK)
}

fn inference(inv: &Invocation, out: &mut dyn Write, err: &mut dyn Write) -> Outcome {
    let run = inv.run.as_deref().unwrap_or(Path::new("."));
    let predictor = Predictor::load(run, &inv.checkpoint).map_err(|e| Failure {
        code: code_of(&e),
        error: format!("{}: {e}", run.display()),
    })?;
    let window = inv.window.map(|w| (w, inv.hop.unwrap_or(w)));
    let dest = inv.output.join(INFERENCE_DIR);
    let mut code = EXIT_OK;
    for input in &inv.positional {
        let results = match run_inference(&predictor, input, &dest, window) {
            Ok(r) => r,
            Err(e) => {
                let _ = writeln!(err, "error: {e}");
                code = EXIT_RUNTIME;
                continue;
            }
        };
        for (file, result) in results {
            match result {
                Ok(path) => {
                    let _ = writeln!(out, "{} -> {}", file.display(), path.display());
                }
                Err(e) => {
                    let _ = writeln!(err, "error: {}: {e}", file.display());
                    code = EXIT_RUNTIME;
                }
            }
        }
    }
    Ok(code)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn args(s: &str) -> Vec<String> {
        s.split_whitespace().map(String::from).collect()
    }

    fn parse(s: &str) -> Result<Invocation> {
        Invocation::parse(&args(s), ".".into())
    }

    #[test]
    fn parses_train_flags() {
        let inv = parse("train -cn a.yaml -cd x -cd y -o out --plan seed=1,2 optimizer.lr=0.1").unwrap();
        assert_eq!(inv.command, Command::Train);
        assert_eq!(inv.config, PathBuf::from("a.yaml"));
        assert_eq!(inv.config_dirs, vec![PathBuf::from("x"), PathBuf::from("y")]);
        assert_eq!(inv.output, PathBuf::from("out"));
        assert!(inv.plan);
        assert_eq!(inv.overrides, vec!["seed=1,2", "optimizer.lr=0.1"]);
    }

    #[test]
    fn rejects_bad_usage() {
        for bad in [
            "",
            "serve",
            "train --bogus",
            "train -cn",
            "fetch --plan",
            "train stray",
            "inference in.wav",
            "inference --run r",
            "inference --run r --hop 1 in.wav",
            "inference --run r --window -1 in.wav",
            "postprocess a b",
        ] {
            assert!(matches!(parse(bad), Err(Error::Usage(_))), "{bad}");
        }
    }

    #[test]
    fn ignore_accepts_lists() {
        let inv = parse("postprocess --ignore seed,optimizer.lr --ignore x").unwrap();
        assert_eq!(inv.ignore, vec!["seed", "optimizer.lr", "x"]);
    }

    #[test]
    fn exit_codes() {
        let (mut o, mut e) = (Vec::new(), Vec::new());
        assert_eq!(run(&args("nope"), ".".into(), &mut o, &mut e), EXIT_USAGE);
        e.clear();
        let code = run(&args("train -cn /definitely/missing.yaml --plan"), ".".into(), &mut o, &mut e);
        assert_eq!(code, EXIT_CONFIG);
        assert!(String::from_utf8(e).unwrap().contains("/definitely/missing.yaml"));
    }

    #[test]
    fn plan_prints_run_ids_without_writing() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = dir.path().join("c.yaml");
        std::fs::write(
            &cfg,
            "experiment_id: t\nseed: 0\ndataset: {id: toytones}\nmodel: {id: ffnn}\n\
             optimizer: {id: adam, lr: 0.01}\ncriterion: {id: cross_entropy}\n\
             training: {epochs: 1, batch_size: 4, tracking_metric: accuracy, tracking_direction: max}\n",
        )
        .unwrap();
        let out = dir.path().join("out");
        let (mut o, mut e) = (Vec::new(), Vec::new());
        let line = format!("train -cn {} -o {} seed=1,2,3 --plan", cfg.display(), out.display());
        assert_eq!(run(&args(&line), ".".into(), &mut o, &mut e), EXIT_OK, "{}", String::from_utf8_lossy(&e));
        let text = String::from_utf8(o).unwrap();
        let ids: BTreeSet<&str> = text.lines().map(|l| l.split_whitespace().next().unwrap()).collect();
        assert_eq!(ids.len(), 3);
        assert!(!out.exists());
    }
}
