//! Settings resolution: command-line flag, then `QDT_*` environment
//! variable, then the root config file, then the built-in default. Every
//! value remembers where it came from so `--verbose` can show it.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{anyhow, Context, Result};

pub const CONFIG_ENV: &str = "QDT_CONFIG";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Source {
    Flag,
    Env,
    File,
    Default,
}

impl fmt::Display for Source {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Source::Flag => "flag",
            Source::Env => "env",
            Source::File => "config file",
            Source::Default => "default",
        })
    }
}

pub struct Settings {
    file: toml::Table,
    file_path: Option<PathBuf>,
    resolved: Vec<(String, String, Source)>,
}

/// `gateway.bind` → `QDT_GATEWAY_BIND`.
pub fn env_name(key: &str) -> String {
    format!("QDT_{}", key.replace(['.', '-'], "_").to_ascii_uppercase())
}

fn scalar_text(value: &toml::Value) -> Option<String> {
    match value {
        toml::Value::String(s) => Some(s.clone()),
        toml::Value::Integer(i) => Some(i.to_string()),
        toml::Value::Float(x) => Some(x.to_string()),
        toml::Value::Boolean(b) => Some(b.to_string()),
        _ => None,
    }
}

impl Settings {
    /// Loads the root config named by `--config`, else by `QDT_CONFIG`.
    pub fn load(flag: Option<&Path>) -> Result<Self> {
        let path = match flag {
            Some(p) => Some(p.to_path_buf()),
            None => std::env::var_os(CONFIG_ENV).map(PathBuf::from),
        };
        let file = match &path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .with_context(|| format!("cannot read config file {}", p.display()))?;
                toml::from_str(&text)
                    .with_context(|| format!("invalid config file {}", p.display()))?
            }
            None => toml::Table::new(),
        };
        Ok(Settings {
            file,
            file_path: path,
            resolved: Vec::new(),
        })
    }

    #[cfg(test)]
    pub fn from_table(file: toml::Table) -> Self {
        Settings {
            file,
            file_path: None,
            resolved: Vec::new(),
        }
    }

    pub fn file_value(&self, key: &str) -> Option<&toml::Value> {
        let mut parts = key.split('.');
        let mut current = self.file.get(parts.next()?)?;
        for part in parts {
            current = current.as_table()?.get(part)?;
        }
        Some(current)
    }

    fn lookup<T>(&self, key: &str, flag: Option<T>) -> Result<Option<(T, Source)>>
    where
        T: FromStr,
        T::Err: fmt::Display,
    {
        if let Some(value) = flag {
            return Ok(Some((value, Source::Flag)));
        }
        let env = env_name(key);
        if let Ok(raw) = std::env::var(&env) {
            let value = raw
                .parse()
                .map_err(|e| anyhow!("invalid value '{raw}' in {env}: {e}"))?;
            return Ok(Some((value, Source::Env)));
        }
        if let Some(value) = self.file_value(key) {
            let raw = scalar_text(value)
                .ok_or_else(|| anyhow!("config key '{key}' must be a single value"))?;
            let value = raw
                .parse()
                .map_err(|e| anyhow!("invalid value '{raw}' for '{key}' in config file: {e}"))?;
            return Ok(Some((value, Source::File)));
        }
        Ok(None)
    }

    pub fn get<T>(&mut self, key: &str, flag: Option<T>, default: T) -> Result<T>
    where
        T: FromStr + fmt::Display,
        T::Err: fmt::Display,
    {
        let (value, source) = self.lookup(key, flag)?.unwrap_or((default, Source::Default));
        self.resolved.push((key.to_string(), value.to_string(), source));
        Ok(value)
    }

    pub fn get_opt<T>(&mut self, key: &str, flag: Option<T>) -> Result<Option<T>>
    where
        T: FromStr + fmt::Display,
        T::Err: fmt::Display,
    {
        Ok(match self.lookup(key, flag)? {
            Some((value, source)) => {
                self.resolved.push((key.to_string(), value.to_string(), source));
                Some(value)
            }
            None => {
                self.resolved.push((key.to_string(), "(unset)".to_string(), Source::Default));
                None
            }
        })
    }

    pub fn path(&mut self, key: &str, flag: Option<PathBuf>, default: &str) -> Result<PathBuf> {
        Ok(PathBuf::from(self.get(
            key,
            flag.map(|p| p.display().to_string()),
            default.to_string(),
        )?))
    }

    pub fn path_opt(&mut self, key: &str, flag: Option<PathBuf>) -> Result<Option<PathBuf>> {
        Ok(self
            .get_opt(key, flag.map(|p| p.display().to_string()))?
            .map(PathBuf::from))
    }

    pub fn report(&self) -> String {
        let mut out = match &self.file_path {
            Some(p) => format!("config file: {}\n", p.display()),
            None => "config file: (none)\n".to_string(),
        };
        let width = self.resolved.iter().map(|(k, _, _)| k.len()).max().unwrap_or(0);
        for (key, value, source) in &self.resolved {
            out.push_str(&format!("  {key:<width$} = {value}  [{source}]\n"));
        }
        out
    }
}
