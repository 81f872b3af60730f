//! `key=value` config files layered under command-line flags.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::path::Path;

use clap::parser::ValueSource;
use clap::{ArgMatches, Command};
use serde::Serialize;

use styleforge::Error;

/// Parses `key = value` lines; `#` starts a comment, blank lines are skipped.
pub fn parse(text: &str) -> Result<BTreeMap<String, String>, Error> {
    let mut entries = BTreeMap::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            Error::validation(format!("config line {}: expected key=value", n + 1))
        })?;
        let key = key.trim().replace('_', "-");
        if entries
            .insert(key.clone(), value.trim().to_owned())
            .is_some()
        {
            return Err(Error::validation(format!(
                "config line {}: duplicate key {key:?}",
                n + 1
            )));
        }
    }
    Ok(entries)
}

pub fn load(path: &Path) -> anyhow::Result<BTreeMap<String, String>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(parse(&text)?)
}

fn parse_bool(key: &str, value: &str) -> Result<bool, Error> {
    match value.to_ascii_lowercase().as_str() {
        "true" | "yes" | "1" | "on" => Ok(true),
        "false" | "no" | "0" | "off" => Ok(false),
        _ => Err(Error::validation(format!(
            "config key {key:?}: {value:?} is not a boolean"
        ))),
    }
}

/// Appends config entries for flags the command line left unset. Keys the
/// subcommand does not know are skipped with a warning.
pub fn merge_into_argv(
    argv: &[OsString],
    command: &Command,
    subcommand: &str,
    matches: &ArgMatches,
    entries: &BTreeMap<String, String>,
) -> Result<(Vec<OsString>, Vec<String>), Error> {
    let sub = command
        .find_subcommand(subcommand)
        .expect("subcommand was parsed from this command");
    let mut merged = argv.to_vec();
    let mut applied = Vec::new();
    for (key, value) in entries {
        let Some(arg) = sub
            .get_arguments()
            .find(|a| a.get_long() == Some(key.as_str()))
        else {
            log::warn!("config key {key:?} does not apply to {subcommand}; ignored");
            continue;
        };
        let id = arg.get_id().as_str();
        if matches.value_source(id) == Some(ValueSource::CommandLine) {
            continue;
        }
        if arg.get_action().takes_values() {
            merged.push(format!("--{key}").into());
            let tokens: Vec<&str> = if arg.get_num_args().is_some_and(|n| n.max_values() > 1) {
                value.split_whitespace().collect()
            } else {
                vec![value.as_str()]
            };
            merged.extend(tokens.into_iter().map(OsString::from));
        } else if parse_bool(key, value)? {
            merged.push(format!("--{key}").into());
        }
        applied.push(id.to_owned());
    }
    Ok((merged, applied))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ResolvedValue {
    pub value: Option<String>,
    pub source: &'static str,
}

/// Every subcommand argument with its final value and where it came from.
pub fn resolved(
    command: &Command,
    subcommand: &str,
    matches: &ArgMatches,
    from_config: &[String],
) -> BTreeMap<String, ResolvedValue> {
    let sub = command
        .find_subcommand(subcommand)
        .expect("subcommand was parsed from this command");
    sub.get_arguments()
        .filter(|a| !matches!(a.get_id().as_str(), "help" | "version"))
        .map(|arg| {
            let id = arg.get_id().as_str();
            let value = if arg.get_action().takes_values() {
                matches.get_raw(id).map(|vals| {
                    vals.map(|v| v.to_string_lossy().into_owned())
                        .collect::<Vec<_>>()
                        .join(" ")
                })
            } else {
                Some(matches.get_flag(id).to_string())
            };
            let source = if from_config.iter().any(|c| c == id) {
                "config"
            } else {
                match matches.value_source(id) {
                    Some(ValueSource::CommandLine) => "flag",
                    Some(ValueSource::EnvVariable) => "env",
                    Some(ValueSource::DefaultValue) => "default",
                    _ => "unset",
                }
            };
            (id.to_owned(), ResolvedValue { value, source })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_comments_and_underscores() {
        let entries = parse("# sweep\ntau = 0.2\nbatch_size=8 # inline\n\n").unwrap();
        assert_eq!(entries["tau"], "0.2");
        assert_eq!(entries["batch-size"], "8");
        assert!(parse("tau 0.2").is_err());
        assert!(parse("tau=1\ntau=2").is_err());
    }

    #[test]
    fn booleans() {
        assert!(parse_bool("x", "Yes").unwrap());
        assert!(!parse_bool("x", "0").unwrap());
        assert!(parse_bool("x", "maybe").is_err());
    }
}
