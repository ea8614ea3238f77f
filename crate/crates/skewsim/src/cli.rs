//! Command-line entry point. Subcommands:
//!
//! - `run --config PATH [--seed N] [--out DIR] [--threads N] [--set k=v ...]`
//!   runs one experiment and writes report.json, metrics.csv, refinement.csv,
//!   experiment artifacts, and manifest.json into the output directory.
//! - `list [--json] [--experiment NAME]` lists the available experiments.
//! - `schema` prints the JSON schema of the run config.
//!
//! Exit codes: 0 when the experiment verdict passes, 2 when it fails, and 1
//! for configuration or usage errors. Overrides win in the order
//! flag > environment (`SKEWSIM_SEED`, `SKEWSIM_OUT`) > config file.

use std::ffi::OsString;
use std::path::PathBuf;

use clap::error::ErrorKind;
use clap::{Parser, Subcommand};
use serde_json::{json, Value};

use crate::config::{Experiment, RunConfig};
use crate::runner;

#[derive(Debug, Parser)]
#[command(
    name = "skewsim",
    version,
    about = "Numerical laboratory for one-dimensional SDEs whose drift acts \
             through the local time of the unknown process"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run one experiment from a JSON config file
    Run {
        /// Path to the run config (JSON)
        #[arg(long)]
        config: PathBuf,
        /// Driver seed override (wins over SKEWSIM_SEED and the config)
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory override (wins over SKEWSIM_OUT and the config)
        #[arg(long)]
        out: Option<PathBuf>,
        /// Worker pool size; outputs are byte-identical for any value
        #[arg(long)]
        threads: Option<usize>,
        /// Override one config value before parsing, as dotted.path=json;
        /// values that do not parse as JSON are taken as strings (repeatable)
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
    },
    /// List the available experiments
    List {
        /// Machine-readable output (JSON array)
        #[arg(long)]
        json: bool,
        /// Show one experiment; unknown names exit nonzero with suggestions
        #[arg(long)]
        experiment: Option<String>,
    },
    /// Print the JSON schema of the run config
    Schema,
}

/// Parses `args` and runs; returns the process exit code. Split from `main`
/// so tests can drive the full CLI in process.
pub fn run_cli<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return code;
        }
    };
    match cli.command {
        Command::Run { config, seed, out, threads, set } => {
            run_cmd(&config, seed, out, threads, &set)
        }
        Command::List { json, experiment } => list_cmd(json, experiment.as_deref()),
        Command::Schema => {
            emit(serde_json::to_string_pretty(&config_schema()).expect("static schema"));
            0
        }
    }
}

/// Entry point for the binary: command-line from the environment.
pub fn main_entry() -> i32 {
    run_cli(std::env::args_os())
}

/// Writes one line to stdout, ignoring write failures so that piping into a
/// pager or `head` that closes the stream early does not abort the process.
fn emit(line: impl std::fmt::Display) {
    use std::io::Write;
    let _ = writeln!(std::io::stdout(), "{line}");
}

fn run_cmd(
    config_path: &PathBuf,
    seed_flag: Option<u64>,
    out_flag: Option<PathBuf>,
    threads_flag: Option<usize>,
    sets: &[String],
) -> i32 {
    let text = match std::fs::read_to_string(config_path) {
        Ok(t) => t,
        Err(e) => {
            eprintln!("error: cannot read {}: {e}", config_path.display());
            return 1;
        }
    };
    let mut value: Value = match serde_json::from_str(&text) {
        Ok(v) => v,
        Err(e) => {
            eprintln!("error: config is not valid JSON: {e}");
            return 1;
        }
    };
    for s in sets {
        if let Err(msg) = apply_set(&mut value, s) {
            eprintln!("error: {msg}");
            return 1;
        }
    }
    let cfg: RunConfig = match serde_json::from_value(value) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: config does not match the run schema: {e}");
            return 1;
        }
    };

    let env_seed = match std::env::var("SKEWSIM_SEED") {
        Ok(raw) => match raw.parse::<u64>() {
            Ok(s) => Some(s),
            Err(_) => {
                eprintln!("error: SKEWSIM_SEED must be an unsigned integer, got '{raw}'");
                return 1;
            }
        },
        Err(_) => None,
    };
    let env_out = std::env::var_os("SKEWSIM_OUT").map(PathBuf::from);

    let seed = seed_flag.or(env_seed).or(cfg.seed);
    let out = out_flag.or(env_out);

    match runner::execute(&cfg, seed, out, threads_flag) {
        Ok((code, dir)) => {
            emit(format!(
                "experiment {}: verdict {}",
                cfg.experiment.name(),
                if code == 0 { "pass" } else { "fail" }
            ));
            emit(format!("outputs written to {}", dir.display()));
            code
        }
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

/// Applies one `dotted.path=value` override to the raw JSON document,
/// creating intermediate objects as needed.
fn apply_set(root: &mut Value, spec: &str) -> Result<(), String> {
    let (path, raw) = spec
        .split_once('=')
        .ok_or_else(|| format!("--set needs KEY=VALUE, got '{spec}'"))?;
    if path.is_empty() {
        return Err(format!("--set needs a non-empty key, got '{spec}'"));
    }
    let new: Value =
        serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut cur = root;
    let parts: Vec<&str> = path.split('.').collect();
    let (last, ancestors) = parts.split_last().expect("non-empty path");
    for part in ancestors {
        let obj = cur
            .as_object_mut()
            .ok_or_else(|| format!("--set path '{path}' crosses a non-object at '{part}'"))?;
        cur = obj.entry(part.to_string()).or_insert_with(|| json!({}));
    }
    cur.as_object_mut()
        .ok_or_else(|| format!("--set path '{path}' crosses a non-object at '{last}'"))?
        .insert(last.to_string(), new);
    Ok(())
}

fn list_cmd(as_json: bool, query: Option<&str>) -> i32 {
    let rows: Vec<Experiment> = match query {
        None => Experiment::ALL.to_vec(),
        Some(name) => match Experiment::from_name(name) {
            Some(e) => vec![e],
            None => {
                eprintln!(
                    "error: unknown experiment '{name}'; closest matches: {}",
                    Experiment::suggestions(name).join(", ")
                );
                return 1;
            }
        },
    };
    if as_json {
        let arr: Vec<Value> = rows
            .iter()
            .map(|e| {
                json!({
                    "name": e.name(),
                    "section": e.section(),
                    "summary": e.summary(),
                })
            })
            .collect();
        emit(serde_json::to_string_pretty(&Value::Array(arr)).expect("static rows"));
    } else {
        for e in rows {
            emit(format!("{:<12} section={:<12} {}", e.name(), e.section(), e.summary()));
        }
    }
    0
}

/// The published schema of the run config (JSON Schema draft-07). Kept in
/// sync with `RunConfig` by the schema tests.
pub fn config_schema() -> Value {
    let experiments: Vec<&str> = Experiment::ALL.iter().map(|e| e.name()).collect();
    let number = json!({"type": "number"});
    let count = json!({"type": "integer", "minimum": 1});
    let pair = json!({
        "type": "array", "items": {"type": "number"},
        "minItems": 2, "maxItems": 2
    });
    let pair_list = json!({"type": "array", "items": pair});
    let real_fn = json!({
        "type": "object",
        "description": "A real function of one variable, tagged by 'kind'",
        "required": ["kind"],
        "properties": {
            "kind": {"enum": ["const", "linear", "poly", "abs_pow", "step",
                               "band", "table", "cosine", "one_plus_abs_sin_inv"]},
            "value": number, "slope": number, "intercept": number,
            "coeffs": {"type": "array", "items": number},
            "scale": number, "exponent": number, "offset": number,
            "at": number, "below": number, "from": number,
            "lo": number, "hi": number, "inside": number, "outside": number,
            "xs": {"type": "array", "items": number},
            "ys": {"type": "array", "items": number},
            "amplitude": number, "angular_frequency": number, "phase": number
        }
    });
    json!({
        "$schema": "http://json-schema.org/draft-07/schema#",
        "title": "skewsim run config",
        "type": "object",
        "additionalProperties": false,
        "required": ["experiment", "sigma"],
        "properties": {
            "experiment": {"enum": experiments},
            "sigma": {"$ref": "#/definitions/real_fn"},
            "zero_set": {
                "type": "object",
                "additionalProperties": false,
                "properties": {
                    "points": {"type": "array", "items": number},
                    "intervals": pair_list
                }
            },
            "drift": {
                "type": ["object", "null"],
                "additionalProperties": false,
                "required": ["b"],
                "properties": {
                    "b": {"$ref": "#/definitions/real_fn"},
                    "zero_set": {"type": "object"}
                }
            },
            "growth_bound": {"anyOf": [pair, {"type": "null"}]},
            "atoms": {
                "description": "(location, weight) atoms of the driving measure",
                "type": "array", "items": pair
            },
            "pieces": {
                "type": "array",
                "items": {
                    "type": "object",
                    "additionalProperties": false,
                    "required": ["lo", "hi", "density"],
                    "properties": {
                        "lo": number, "hi": number,
                        "density": {"$ref": "#/definitions/real_fn"}
                    }
                }
            },
            "x0": number,
            "seed": {"type": ["integer", "null"], "minimum": 0},
            "out": {"type": ["string", "null"]},
            "threads": {"anyOf": [count, {"type": "null"}]},
            "simulate": {
                "type": ["object", "null"],
                "additionalProperties": false,
                "properties": {
                    "scheme": {"enum": ["transform", "atom", "classical", "reflected"]},
                    "paths": count, "steps": count, "horizon": number,
                    "seed": {"type": "integer", "minimum": 0},
                    "resolution": count,
                    "domain": {"anyOf": [pair, {"type": "null"}]},
                    "dump_paths": {"type": "boolean"}
                }
            },
            "localtime": {
                "type": ["object", "null"],
                "additionalProperties": false,
                "properties": {
                    "level": number, "paths": count, "steps": count,
                    "refinements": count, "horizon": number,
                    "seed": {"type": "integer", "minimum": 0},
                    "resolution": count,
                    "weight": {"anyOf": [{"$ref": "#/definitions/real_fn"}, {"type": "null"}]},
                    "residual_tolerance": number, "identity_tolerance": number
                }
            },
            "uniqueness": {
                "type": ["object", "null"],
                "additionalProperties": false,
                "properties": {
                    "steps_ladder": {"type": "array", "items": count},
                    "deltas": {"type": "array", "items": number},
                    "paths": count, "horizon": number,
                    "seed": {"type": "integer", "minimum": 0},
                    "gap_threshold": number, "resolution": count
                }
            },
            "conditions": {
                "type": ["object", "null"],
                "additionalProperties": false,
                "properties": {
                    "compacts": pair_list,
                    "pair": {
                        "type": ["object", "null"],
                        "description": "modulus pair: f, h (tagged by 'kind'), n_f zero set"
                    },
                    "samples": count,
                    "seed": {"type": "integer", "minimum": 0},
                    "domain": {"anyOf": [pair, {"type": "null"}]}
                }
            },
            "reflected": {
                "type": ["object", "null"],
                "additionalProperties": false,
                "properties": {
                    "paths": count, "steps": count, "horizon": number,
                    "seed": {"type": "integer", "minimum": 0},
                    "partner_offset": number,
                    "power": {"type": "integer", "minimum": 0},
                    "support_delta": number,
                    "power_tolerance": number, "support_tolerance": number
                }
            },
            "fk": {
                "type": ["object", "null"],
                "additionalProperties": false,
                "properties": {
                    "payoff": {
                        "type": "object",
                        "additionalProperties": false,
                        "required": ["f", "g_time", "g_space", "f_bound", "g_bound"],
                        "properties": {
                            "f": {"$ref": "#/definitions/real_fn"},
                            "g_time": {"$ref": "#/definitions/real_fn"},
                            "g_space": {"$ref": "#/definitions/real_fn"},
                            "f_bound": number, "g_bound": number
                        }
                    },
                    "compare": {
                        "type": "object",
                        "additionalProperties": false,
                        "properties": {
                            "probes": pair_list, "horizon": number,
                            "mc_paths": count, "mc_steps": count,
                            "seed": {"type": "integer", "minimum": 0},
                            "pde_cells": count, "resolution": count
                        }
                    }
                }
            },
            "continuity": {
                "type": ["object", "null"],
                "additionalProperties": false,
                "properties": {
                    "offsets": {"type": "array", "items": number},
                    "alpha": number, "eps_level": number, "floor": number,
                    "paths": count, "steps": count, "horizon": number,
                    "seed": {"type": "integer", "minimum": 0},
                    "resolution": count
                }
            },
            "regularity": {
                "type": ["object", "null"],
                "additionalProperties": false,
                "properties": {
                    "steps": count, "paths": count, "horizon": number,
                    "seed": {"type": "integer", "minimum": 0},
                    "resolution": count
                }
            },
            "sobolev": {
                "type": ["object", "null"],
                "additionalProperties": false,
                "properties": {"domain": pair, "resolution": count}
            },
            "nakao": {
                "type": ["object", "null"],
                "additionalProperties": false,
                "properties": {"eps_floor": number, "compacts": pair_list}
            }
        },
        "definitions": {"real_fn": real_fn}
    })
}
