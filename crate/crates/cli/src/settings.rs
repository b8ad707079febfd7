use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use ini::Ini;

use crate::CliError;

/// Flat key/value settings from an INI file. Keys in the unnamed section
/// apply to every command; a `[command]` section overrides them for that
/// command only.
#[derive(Debug, Default)]
pub struct Settings {
    values: BTreeMap<String, String>,
    source: Option<PathBuf>,
}

impl Settings {
    pub fn load(path: Option<&Path>, command: &str, known: &[&str]) -> Result<Self, CliError> {
        let Some(path) = path else {
            return Ok(Settings::default());
        };
        let ini = Ini::load_from_file(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        let mut values = BTreeMap::new();
        for (section, props) in ini.iter() {
            if section.is_some() && section != Some(command) {
                continue;
            }
            for (k, v) in props.iter() {
                let key = k.trim().replace('-', "_");
                if !known.contains(&key.as_str()) && !COMMON_KEYS.contains(&key.as_str()) {
                    return Err(CliError::Usage(format!(
                        "{}: unknown key {key:?} for {command}",
                        path.display()
                    )));
                }
                if section.is_none() && values.contains_key(&key) {
                    continue;
                }
                values.insert(key, v.trim().to_string());
            }
        }
        Ok(Settings {
            values,
            source: Some(path.to_path_buf()),
        })
    }

    fn origin(&self) -> String {
        match &self.source {
            Some(p) => p.display().to_string(),
            None => "config".into(),
        }
    }

    pub fn raw(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }

    /// The flag when given, otherwise the parsed config key.
    pub fn get<T>(&self, flag: Option<T>, key: &str) -> Result<Option<T>, CliError>
    where
        T: FromStr,
        T::Err: Display,
    {
        if flag.is_some() {
            return Ok(flag);
        }
        self.raw(key)
            .map(|v| {
                v.parse::<T>()
                    .map_err(|e| CliError::Usage(format!("{}: invalid value {v:?} for {key}: {e}", self.origin())))
            })
            .transpose()
    }

    pub fn get_or<T>(&self, flag: Option<T>, key: &str, default: T) -> Result<T, CliError>
    where
        T: FromStr,
        T::Err: Display,
    {
        Ok(self.get(flag, key)?.unwrap_or(default))
    }

    pub fn require<T>(&self, flag: Option<T>, key: &str) -> Result<T, CliError>
    where
        T: FromStr,
        T::Err: Display,
    {
        self.get(flag, key)?
            .ok_or_else(|| CliError::Usage(format!("--{} (config key {key}) is required", key.replace('_', "-"))))
    }

    /// Comma-separated list from the flag or the config key.
    pub fn list<T>(&self, flag: Option<Vec<T>>, key: &str) -> Result<Option<Vec<T>>, CliError>
    where
        T: FromStr,
        T::Err: Display,
    {
        if flag.is_some() {
            return Ok(flag);
        }
        self.raw(key).map(|v| parse_list(v, key)).transpose()
    }
}

pub const COMMON_KEYS: &[&str] = &["seed", "checkpoint", "out"];

pub fn parse_list<T>(v: &str, key: &str) -> Result<Vec<T>, CliError>
where
    T: FromStr,
    T::Err: Display,
{
    v.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse::<T>()
                .map_err(|e| CliError::Usage(format!("invalid entry {s:?} in {key}: {e}")))
        })
        .collect()
}
