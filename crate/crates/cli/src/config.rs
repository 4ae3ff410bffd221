//! Flat key-value configuration layered under command-line flags.

use std::cell::RefCell;
use std::collections::BTreeSet;
use std::path::Path;

use serde::de::DeserializeOwned;

use crate::error::CliError;

/// A flat TOML table whose keys mirror flag names (`learning-rate`, or
/// `learning_rate`). Lookups record which keys were consumed.
#[derive(Debug, Default)]
pub struct ConfigFile {
    table: toml::Table,
    used: RefCell<BTreeSet<String>>,
}

fn normalize(key: &str) -> String {
    key.replace('_', "-")
}

impl ConfigFile {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::usage(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| CliError::usage(format!("config {}: {e}", path.display())))
    }

    pub fn parse(text: &str) -> Result<Self, String> {
        let raw: toml::Table = text.parse().map_err(|e: toml::de::Error| e.to_string())?;
        let mut table = toml::Table::new();
        for (k, v) in raw {
            if v.is_table() {
                return Err(format!("key {k:?}: nested tables are not supported"));
            }
            if table.insert(normalize(&k), v).is_some() {
                return Err(format!("key {k:?} given twice"));
            }
        }
        Ok(Self {
            table,
            used: RefCell::default(),
        })
    }

    fn lookup<T: DeserializeOwned>(&self, key: &str) -> Result<Option<T>, CliError> {
        let Some(v) = self.table.get(key) else {
            return Ok(None);
        };
        self.used.borrow_mut().insert(key.to_string());
        v.clone()
            .try_into()
            .map(Some)
            .map_err(|e| CliError::usage(format!("config key {key}: {e}")))
    }

    /// Flag value if given, else the config value, else `default`.
    pub fn pick<T: DeserializeOwned>(&self, flag: Option<T>, key: &str, default: T) -> Result<T, CliError> {
        Ok(self.pick_opt(flag, key)?.unwrap_or(default))
    }

    pub fn pick_opt<T: DeserializeOwned>(&self, flag: Option<T>, key: &str) -> Result<Option<T>, CliError> {
        match flag {
            Some(v) => {
                // still mark as consumed so it is not reported as unknown
                self.used.borrow_mut().insert(key.to_string());
                Ok(Some(v))
            }
            None => self.lookup(key),
        }
    }

    /// Like [`pick`](Self::pick) for values parsed from strings.
    pub fn pick_parsed<T>(&self, flag: Option<T>, key: &str, default: T) -> Result<T, CliError>
    where
        T: std::str::FromStr,
        T::Err: std::fmt::Display,
    {
        if flag.is_some() {
            self.used.borrow_mut().insert(key.to_string());
            return Ok(flag.expect("checked"));
        }
        match self.lookup::<String>(key)? {
            Some(s) => s
                .parse()
                .map_err(|e| CliError::usage(format!("config key {key}: {e}"))),
            None => Ok(default),
        }
    }

    pub fn warn_unused(&self) {
        let used = self.used.borrow();
        for k in self.table.keys().filter(|k| !used.contains(*k)) {
            log::warn!("config key {k:?} is not used by this command");
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn precedence_flag_config_default() {
        let c = ConfigFile::parse("epochs = 5\nlearning_rate = 0.5\nobjective = \"dpo\"").unwrap();
        assert_eq!(c.pick(Some(3usize), "epochs", 18).unwrap(), 3);
        assert_eq!(c.pick(None, "epochs", 18usize).unwrap(), 5);
        assert_eq!(c.pick(None, "batch-size", 16usize).unwrap(), 16);
        assert_eq!(c.pick(None, "learning-rate", 1e-2).unwrap(), 0.5);
        let k: alab_core::ObjectiveKind = c.pick_parsed(None, "objective", alab_core::ObjectiveKind::Sft).unwrap();
        assert_eq!(k, alab_core::ObjectiveKind::Dpo);
    }

    #[test]
    fn bad_values_are_usage_errors() {
        let c = ConfigFile::parse("epochs = \"many\"").unwrap();
        assert!(matches!(c.pick(None, "epochs", 1usize), Err(CliError::Usage(_))));
        assert!(ConfigFile::parse("[section]\na = 1").is_err());
        assert!(ConfigFile::parse("a = 1\nA = 2").is_ok());
        assert!(ConfigFile::parse("a-b = 1\na_b = 2").is_err());
    }
}
