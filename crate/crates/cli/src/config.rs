//! Flat `key = value` configuration files.
//!
//! Entries are turned into long options and spliced in front of the options
//! given on the command line, so clap validates them like any flag and a
//! flag repeated on the command line wins.

use std::ffi::OsString;
use std::path::Path;

use clap::Command;

use crate::error::{CliError, Result};

/// Parses `key = value` lines; `#` starts a comment, blank lines are skipped.
/// Keys may use `_` or `-`.
pub fn parse(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return Err(CliError::Usage(format!("config line {}: expected key = value, got {raw:?}", i + 1)));
        };
        let key = k.trim().replace('_', "-");
        if key.is_empty() {
            return Err(CliError::Usage(format!("config line {}: empty key", i + 1)));
        }
        out.push((key, v.trim().to_string()));
    }
    Ok(out)
}

/// Finds `--config PATH` (or `--config=PATH`) after the subcommand.
fn config_path(args: &[OsString]) -> Option<OsString> {
    let mut it = args.iter().skip(2);
    while let Some(a) = it.next() {
        let s = a.to_string_lossy();
        if s == "--" {
            break;
        }
        if s == "--config" {
            return it.next().cloned();
        }
        if let Some(p) = s.strip_prefix("--config=") {
            return Some(p.into());
        }
    }
    None
}

/// Returns `args` with the entries of the subcommand's `--config` file
/// inserted right after the subcommand name.
pub fn expand(args: Vec<OsString>, cmd: &Command) -> Result<Vec<OsString>> {
    let Some(path) = config_path(&args) else {
        return Ok(args);
    };
    let name = args[1].to_string_lossy().into_owned();
    let Some(sub) = cmd.find_subcommand(&name) else {
        return Ok(args);
    };
    let path = Path::new(&path);
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Data(format!("config {}: {e}", path.display())))?;
    let mut injected: Vec<OsString> = Vec::new();
    for (key, value) in parse(&text)? {
        let arg = sub
            .get_arguments()
            .find(|a| a.get_long() == Some(key.as_str()) && key != "config")
            .ok_or_else(|| CliError::Usage(format!("config {}: unknown key {key:?} for `{name}`", path.display())))?;
        if arg.get_action().takes_values() {
            injected.push(format!("--{key}").into());
            injected.extend(value.split_whitespace().map(OsString::from));
        } else {
            match value.to_ascii_lowercase().as_str() {
                "true" | "yes" | "1" => injected.push(format!("--{key}").into()),
                "false" | "no" | "0" => {}
                _ => return Err(CliError::Usage(format!("config {}: {key} expects true or false, got {value:?}", path.display()))),
            }
        }
    }
    let mut out = args;
    out.splice(2..2, injected);
    Ok(out)
}
