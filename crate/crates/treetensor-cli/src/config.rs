//! Layered configuration: defaults < key=value config file <
//! `TREETENSOR_`-prefixed environment variables < command-line flags.

use std::collections::HashMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

pub const ENV_PREFIX: &str = "TREETENSOR_";

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Verification(String),
    Runtime(String),
}

impl CliError {
    pub fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Verification(_) => 2,
            CliError::Runtime(_) => 3,
        }
    }

    pub fn usage(msg: impl Into<String>) -> Self {
        CliError::Usage(msg.into())
    }

    pub fn runtime(msg: impl Into<String>) -> Self {
        CliError::Runtime(msg.into())
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage: {m}"),
            CliError::Verification(m) => write!(f, "verification failed: {m}"),
            CliError::Runtime(m) => write!(f, "{m}"),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

impl From<treetensor::data::DataError> for CliError {
    fn from(e: treetensor::data::DataError) -> Self {
        CliError::Runtime(e.to_string())
    }
}

impl From<treetensor::train::TrainError> for CliError {
    fn from(e: treetensor::train::TrainError) -> Self {
        CliError::Runtime(e.to_string())
    }
}

impl From<treetensor::checkpoint::CheckpointError> for CliError {
    fn from(e: treetensor::checkpoint::CheckpointError) -> Self {
        CliError::Runtime(e.to_string())
    }
}

/// Config file plus environment, queried by key with flags taking
/// precedence at the call site.
#[derive(Debug, Default)]
pub struct Overlay {
    values: HashMap<String, String>,
}

impl Overlay {
    pub fn load(config_path: Option<&Path>) -> Result<Self, CliError> {
        let mut values = HashMap::new();
        if let Some(path) = config_path {
            let text = std::fs::read_to_string(path).map_err(|e| {
                CliError::usage(format!("cannot read config {}: {e}", path.display()))
            })?;
            for (no, raw) in text.lines().enumerate() {
                let line = raw.trim();
                if line.is_empty() || line.starts_with('#') {
                    continue;
                }
                let (k, v) = line.split_once('=').ok_or_else(|| {
                    CliError::usage(format!(
                        "{}:{}: expected key=value, found {raw:?}",
                        path.display(),
                        no + 1
                    ))
                })?;
                values.insert(k.trim().to_ascii_lowercase(), v.trim().to_string());
            }
        }
        for (k, v) in std::env::vars() {
            if let Some(key) = k.strip_prefix(ENV_PREFIX) {
                values.insert(key.to_ascii_lowercase(), v);
            }
        }
        Ok(Self { values })
    }

    /// Flag value if given, else overlay value, else `default`.
    pub fn resolve<T>(&self, key: &str, flag: Option<T>, default: T) -> Result<T, CliError>
    where
        T: FromStr,
        T::Err: fmt::Display,
    {
        match flag {
            Some(v) => Ok(v),
            None => self.lookup(key).map(|o| o.unwrap_or(default)),
        }
    }

    /// Flag value if given, else overlay value, else an error naming the key.
    pub fn require<T>(&self, key: &str, flag: Option<T>) -> Result<T, CliError>
    where
        T: FromStr,
        T::Err: fmt::Display,
    {
        match flag {
            Some(v) => Ok(v),
            None => self
                .lookup(key)?
                .ok_or_else(|| CliError::usage(format!("missing required option {key:?}"))),
        }
    }

    pub fn lookup<T>(&self, key: &str) -> Result<Option<T>, CliError>
    where
        T: FromStr,
        T::Err: fmt::Display,
    {
        match self.values.get(key) {
            None => Ok(None),
            Some(raw) => raw
                .parse()
                .map(Some)
                .map_err(|e| CliError::usage(format!("bad value for {key}: {e}"))),
        }
    }
}
