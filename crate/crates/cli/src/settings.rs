//! Flat key/value settings: command-line values over a JSON config file over
//! built-in defaults. Keys are long flag names.

use std::cell::RefCell;
use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{Context, Result};
use clap::parser::ValueSource;
use clap::{ArgMatches, CommandFactory};
use serde_json::Value;

use crate::args::Cli;
use crate::UsageError;

/// Keys that never reach the snapshot.
const META_KEYS: &[&str] = &["config"];

#[derive(Debug)]
pub struct Settings {
    command: String,
    values: BTreeMap<String, String>,
    resolved: RefCell<BTreeMap<String, Value>>,
}

fn key(id: &str) -> String {
    id.replace('_', "-")
}

fn value_to_string(v: &Value) -> Option<String> {
    match v {
        Value::String(s) => Some(s.clone()),
        Value::Number(n) => Some(n.to_string()),
        Value::Bool(b) => Some(b.to_string()),
        _ => None,
    }
}

impl Settings {
    /// Merges the explicitly given arguments of `matches` over the optional
    /// `--config` file. Keys in the file must be flags of `command`.
    pub fn from_matches(command: &str, matches: &ArgMatches) -> Result<Self> {
        let known: Vec<String> = Cli::command()
            .find_subcommand(command)
            .map(|c| c.get_arguments().map(|a| key(a.get_id().as_str())).collect())
            .unwrap_or_default();
        let mut values = BTreeMap::new();
        if let Some(path) = matches.get_one::<PathBuf>("config") {
            let file = load_config(path)?;
            for (k, v) in file {
                if META_KEYS.contains(&k.as_str()) || !known.contains(&k) {
                    return Err(UsageError(format!("unknown key `{k}` in {} for `{command}`", path.display())).into());
                }
                let s = value_to_string(&v)
                    .ok_or_else(|| UsageError(format!("config key `{k}` must be a string, number or bool")))?;
                values.insert(k, s);
            }
        }
        for id in matches.ids() {
            let k = key(id.as_str());
            if META_KEYS.contains(&k.as_str()) || matches.value_source(id.as_str()) != Some(ValueSource::CommandLine) {
                continue;
            }
            if let Some(raw) = matches.get_raw(id.as_str()) {
                let raw: Vec<_> = raw.map(|r| r.to_string_lossy().into_owned()).collect();
                values.insert(k, raw.join(","));
            }
        }
        Ok(Self::from_values(command, values))
    }

    /// Settings from an earlier snapshot; every value counts as given.
    pub fn from_snapshot(command: &str, snapshot: &BTreeMap<String, Value>) -> Result<Self> {
        let mut values = BTreeMap::new();
        for (k, v) in snapshot {
            if v.is_null() {
                continue;
            }
            let s = value_to_string(v).with_context(|| format!("manifest value for `{k}` is not a scalar"))?;
            values.insert(k.clone(), s);
        }
        Ok(Self::from_values(command, values))
    }

    fn from_values(command: &str, values: BTreeMap<String, String>) -> Self {
        Self {
            command: command.to_string(),
            values,
            resolved: RefCell::new(BTreeMap::new()),
        }
    }

    pub fn command(&self) -> &str {
        &self.command
    }

    pub fn is_set(&self, key: &str) -> bool {
        self.values.contains_key(key)
    }

    pub fn set(&mut self, key: &str, value: impl Into<String>) {
        self.values.insert(key.to_string(), value.into());
    }

    fn record(&self, key: &str, v: Value) {
        self.resolved.borrow_mut().insert(key.to_string(), v);
    }

    fn parse<T>(&self, key: &str) -> Result<Option<T>>
    where
        T: FromStr,
        T::Err: Display,
    {
        match self.values.get(key) {
            None => Ok(None),
            Some(raw) => raw
                .parse()
                .map(Some)
                .map_err(|e| UsageError(format!("invalid value `{raw}` for --{key}: {e}")).into()),
        }
    }

    pub fn get_or<T>(&self, key: &str, default: T) -> Result<T>
    where
        T: FromStr + Display,
        T::Err: Display,
    {
        let v = self.parse(key)?.unwrap_or(default);
        self.record(key, Value::String(v.to_string()));
        Ok(v)
    }

    pub fn get_opt<T>(&self, key: &str) -> Result<Option<T>>
    where
        T: FromStr + Display,
        T::Err: Display,
    {
        let v: Option<T> = self.parse(key)?;
        self.record(key, v.as_ref().map_or(Value::Null, |v| Value::String(v.to_string())));
        Ok(v)
    }

    pub fn require<T>(&self, key: &str) -> Result<T>
    where
        T: FromStr + Display,
        T::Err: Display,
    {
        self.get_opt(key)?
            .ok_or_else(|| UsageError(format!("--{key} is required for `{}`", self.command)).into())
    }

    pub fn flag(&self, key: &str) -> Result<bool> {
        self.get_or(key, false)
    }

    pub fn path_opt(&self, key: &str) -> Result<Option<PathBuf>> {
        let v = self.values.get(key).map(PathBuf::from);
        self.record(
            key,
            v.as_ref()
                .map_or(Value::Null, |p| Value::String(p.to_string_lossy().into_owned())),
        );
        Ok(v)
    }

    pub fn path(&self, key: &str) -> Result<PathBuf> {
        self.path_opt(key)?
            .ok_or_else(|| UsageError(format!("--{key} is required for `{}`", self.command)).into())
    }

    /// Fails when any of `keys` was given.
    pub fn forbid(&self, keys: &[&str], why: &str) -> Result<()> {
        match keys.iter().find(|k| self.is_set(k)) {
            Some(k) => Err(UsageError(format!("--{k} {why}")).into()),
            None => Ok(()),
        }
    }

    /// Every value read so far, after defaults.
    pub fn snapshot(&self) -> BTreeMap<String, Value> {
        self.resolved.borrow().clone()
    }
}

fn load_config(path: &Path) -> Result<serde_json::Map<String, Value>> {
    let text = std::fs::read_to_string(path).map_err(|e| UsageError(format!("cannot read {}: {e}", path.display())))?;
    match serde_json::from_str(&text) {
        Ok(Value::Object(map)) => Ok(map),
        Ok(_) => Err(UsageError(format!("{} must hold a JSON object", path.display())).into()),
        Err(e) => Err(UsageError(format!("{}: {e}", path.display())).into()),
    }
}
