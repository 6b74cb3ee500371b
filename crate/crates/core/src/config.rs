//! Versioned TOML team files and the worker-count knob.
//!
//! A file names either a benchmark with parameters or a full team:
//!
//! ```toml
//! schema_version = 1
//! [benchmark]
//! name = "relay"
//! params = { n = 3, lambda = [0.1, 0.1] }
//! ```

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::benchmarks::{build_benchmark, Params};
use crate::error::{Error, Result};
use crate::model::TeamSpec;

pub const SCHEMA_VERSION: u32 = 1;
pub const THREADS_ENV: &str = "TEAMOPT_THREADS";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ParamValue {
    Int(i64),
    Float(f64),
    List(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkRef {
    pub name: String,
    #[serde(default)]
    pub params: BTreeMap<String, ParamValue>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TeamFile {
    pub schema_version: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub benchmark: Option<BenchmarkRef>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub team: Option<TeamSpec>,
}

impl BenchmarkRef {
    pub fn params(&self) -> Params {
        Params(
            self.params
                .iter()
                .map(|(k, v)| {
                    let v = match v {
                        ParamValue::Int(i) => vec![*i as f64],
                        ParamValue::Float(f) => vec![*f],
                        ParamValue::List(l) => l.clone(),
                    };
                    (k.clone(), v)
                })
                .collect(),
        )
    }
}

impl TeamFile {
    pub fn from_spec(spec: TeamSpec) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            benchmark: None,
            team: Some(spec),
        }
    }

    pub fn parse(text: &str) -> Result<Self> {
        let f: TeamFile = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        if f.schema_version != SCHEMA_VERSION {
            return Err(Error::Config(format!(
                "unsupported schema_version {} (expected {SCHEMA_VERSION})",
                f.schema_version
            )));
        }
        if f.benchmark.is_some() == f.team.is_some() {
            return Err(Error::Config("exactly one of [benchmark] or [team] is required".into()));
        }
        Ok(f)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Builds (and thereby validates) the declared team.
    pub fn spec(&self) -> Result<TeamSpec> {
        match (&self.benchmark, &self.team) {
            (Some(b), None) => build_benchmark(&b.name, &b.params()),
            (None, Some(t)) => {
                crate::model::validate_team(t)?;
                Ok(t.clone())
            }
            _ => Err(Error::Config("exactly one of [benchmark] or [team] is required".into())),
        }
    }
}

/// Reads `TEAMOPT_THREADS`; `None` when unset.
pub fn threads_from_env() -> Result<Option<usize>> {
    match std::env::var(THREADS_ENV) {
        Err(std::env::VarError::NotPresent) => Ok(None),
        Err(e) => Err(Error::Config(format!("{THREADS_ENV}: {e}"))),
        Ok(s) => match s.trim().parse::<usize>() {
            Ok(n) if n >= 1 => Ok(Some(n)),
            _ => Err(Error::Config(format!(
                "{THREADS_ENV} must be a positive integer, got `{s}`"
            ))),
        },
    }
}

/// Caps the global worker pool at `TEAMOPT_THREADS` if set. Only the first
/// call in a process takes effect.
pub fn configure_threads() -> Result<Option<usize>> {
    let n = threads_from_env()?;
    if let Some(n) = n {
        // An already initialized pool keeps its size.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    Ok(n)
}
