//! `--config` merging and output provenance.

use std::path::Path;

use clap::parser::ValueSource;
use clap::{ArgMatches, CommandFactory};
use serde::Serialize;
use serde_json::{json, Value};
use treetilt::io::{atomic_write, json_hash};

use crate::args::Cli;
use crate::{usage, CliError};

/// Appends `--key value` for every config-file entry whose flag was not
/// given on the command line. Keys are flag names without the dashes.
pub fn merge_config_file(matches: &ArgMatches, mut argv: Vec<String>) -> Result<Vec<String>, CliError> {
    let Some(path) = matches.get_one::<std::path::PathBuf>("config") else {
        return Ok(argv);
    };
    let text = std::fs::read_to_string(path).map_err(|e| usage(format!("cannot read {}: {e}", path.display())))?;
    let value: Value = serde_json::from_str(&text).map_err(|e| usage(format!("{}: {e}", path.display())))?;
    let Value::Object(map) = value else {
        return Err(usage(format!("{}: expected a JSON object", path.display())));
    };
    let (name, sub_matches) = matches.subcommand().ok_or_else(|| usage("no subcommand"))?;
    let root = Cli::command();
    let sub = root.find_subcommand(name).ok_or_else(|| usage("unknown subcommand"))?;
    for (key, v) in map {
        let arg = sub
            .get_arguments()
            .find(|a| a.get_long() == Some(key.as_str()) && a.get_id() != "config")
            .ok_or_else(|| usage(format!("{}: unknown key {key:?} for {name}", path.display())))?;
        if sub_matches.value_source(arg.get_id().as_str()) == Some(ValueSource::CommandLine) {
            continue;
        }
        let flag = format!("--{key}");
        match v {
            Value::Bool(true) => argv.push(flag),
            Value::Bool(false) | Value::Null => {}
            Value::String(s) => {
                argv.push(flag);
                argv.push(s);
            }
            Value::Number(n) => {
                argv.push(flag);
                argv.push(n.to_string());
            }
            Value::Array(items) => {
                let parts: Vec<String> = items
                    .iter()
                    .map(|i| match i {
                        Value::String(s) => s.clone(),
                        other => other.to_string(),
                    })
                    .collect();
                argv.push(flag);
                argv.push(parts.join(","));
            }
            Value::Object(_) => return Err(usage(format!("{}: key {key:?} cannot be an object", path.display()))),
        }
    }
    Ok(argv)
}

/// Effective configuration of one run and its hash. The output location is
/// not part of the configuration.
pub struct RunInfo {
    pub command: &'static str,
    pub config: Value,
    pub config_hash: String,
    pub seed: Option<u64>,
}

impl RunInfo {
    pub fn new<T: Serialize>(command: &'static str, args: &T, seed: Option<u64>) -> Result<Self, CliError> {
        let mut args = serde_json::to_value(args).map_err(treetilt::Error::from)?;
        if let Value::Object(m) = &mut args {
            m.remove("out");
        }
        let config = json!({ "command": command, "args": args });
        let config_hash = json_hash(&config)?;
        Ok(Self {
            command,
            config,
            config_hash,
            seed,
        })
    }

    pub fn provenance(&self) -> Value {
        json!({
            "command": self.command,
            "version": env!("CARGO_PKG_VERSION"),
            "seed": self.seed,
            "config_hash": self.config_hash,
            "config": self.config,
        })
    }

    /// Writes `manifest.json` listing `outputs` into `dir`.
    pub fn write_manifest(&self, dir: &Path, outputs: &[String]) -> Result<(), CliError> {
        let mut v = self.provenance();
        v["outputs"] = json!(outputs);
        write_json(&dir.join("manifest.json"), &v)
    }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).map_err(treetilt::Error::from)?;
    text.push('\n');
    atomic_write(path, text.as_bytes())?;
    Ok(())
}
