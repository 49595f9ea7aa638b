use std::ffi::OsString;
use std::fs;
use std::path::Path;

use clap::parser::ValueSource;
use clap::{ArgMatches, CommandFactory};
use serde_json::Value;

use super::Cli;
use crate::error::{Error, Result};

/// Appends `--flag=value` for every config entry whose flag was not given on
/// the command line.
///
/// The file is a JSON object of flag names (kebab or snake case). An entry
/// whose key names a subcommand holds an object of flags for that
/// subcommand only; sections of other subcommands are ignored.
pub(super) fn merge_config(argv: &[OsString], matches: &ArgMatches, path: &Path) -> Result<Vec<OsString>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let root: Value =
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("config {}: {e}", path.display())))?;
    let Value::Object(root) = root else {
        return Err(Error::Config("config file must hold a JSON object".into()));
    };
    let (name, sub_matches) = matches.subcommand().expect("a subcommand is required");

    let mut cmd = Cli::command();
    cmd.build();
    let sub = cmd.find_subcommand(name).expect("parsed subcommand exists");
    let section_names: Vec<&str> = cmd.get_subcommands().map(|c| c.get_name()).collect();

    let mut entries: Vec<(&String, &Value)> = Vec::new();
    for (key, value) in &root {
        if section_names.contains(&key.as_str()) {
            if key == name {
                let Value::Object(section) = value else {
                    return Err(Error::Config(format!("config section {key:?} must be an object")));
                };
                entries.extend(section.iter());
            }
        } else {
            entries.push((key, value));
        }
    }

    let explicit = |id: &str| {
        [matches, sub_matches]
            .iter()
            .any(|m| m.try_contains_id(id).unwrap_or(false) && m.value_source(id) == Some(ValueSource::CommandLine))
    };
    let mut merged = argv.to_vec();
    for (key, value) in entries {
        let long = key.replace('_', "-");
        let arg = sub
            .get_arguments()
            .find(|a| a.get_long() == Some(long.as_str()) && long != "config")
            .ok_or_else(|| Error::Config(format!("config key {key:?} is not a flag of {name}")))?;
        if explicit(arg.get_id().as_str()) {
            continue;
        }
        merged.push(format!("--{long}={}", render(key, value)?).into());
    }
    Ok(merged)
}

fn render(key: &str, value: &Value) -> Result<String> {
    let scalar = |v: &Value| match v {
        Value::String(s) => Ok(s.clone()),
        Value::Number(n) => Ok(n.to_string()),
        Value::Bool(b) => Ok(b.to_string()),
        _ => Err(Error::Config(format!("config key {key:?} has an unsupported value {v}"))),
    };
    match value {
        Value::Array(items) => Ok(items.iter().map(scalar).collect::<Result<Vec<_>>>()?.join(",")),
        v => scalar(v),
    }
}
