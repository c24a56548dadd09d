// SPDX-License-Identifier: Apache-2.0

use std::fmt;
use std::fs::File;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use n2g_core::oracle::RemoteSubstitutes;
use n2g_core::{
    Error, NeuronRef, NoSubstitutes, OracleBackend, RemoteOracle, SubstitutionProvider,
    SyntheticNeuronSpec, SyntheticOracle, TableProvider,
};
use serde::{Deserialize, Serialize};

/// Where activations come from: a rule file or a model server.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum BackendSpec {
    Synthetic { path: PathBuf },
    Remote { url: String },
}

impl FromStr for BackendSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        match s.split_once(':') {
            Some(("synthetic", path)) if !path.is_empty() => Ok(BackendSpec::Synthetic {
                path: PathBuf::from(path),
            }),
            Some(("remote", url)) if !url.is_empty() => Ok(BackendSpec::Remote { url: url.to_string() }),
            _ => Err(Error::Usage(format!(
                "backend must be synthetic:PATH or remote:URL, got {s:?}"
            ))),
        }
    }
}

impl fmt::Display for BackendSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BackendSpec::Synthetic { path } => write!(f, "synthetic:{}", path.display()),
            BackendSpec::Remote { url } => write!(f, "remote:{url}"),
        }
    }
}

impl BackendSpec {
    /// `--backend` if given, else the remote endpoint from the environment.
    pub fn resolve(flag: Option<&str>, url: Option<&str>) -> Result<Self, Error> {
        match (flag, url) {
            (Some(s), _) => s.parse(),
            (None, Some(u)) if !u.is_empty() => Ok(BackendSpec::Remote { url: u.to_string() }),
            _ => Err(Error::Usage(
                "no backend: pass --backend or set N2G_BACKEND_URL".into(),
            )),
        }
    }

    /// Opens the oracle. A synthetic spec file serves every requested neuron.
    pub fn open(&self, neurons: &[NeuronRef]) -> Result<Box<dyn OracleBackend>, Error> {
        match self {
            BackendSpec::Synthetic { path } => {
                let spec = SyntheticNeuronSpec::from_reader(open(path)?)?;
                let mut oracle = SyntheticOracle::new(
                    *neurons.first().ok_or_else(|| Error::Usage("no neurons to build".into()))?,
                    spec.clone(),
                );
                for &n in &neurons[1..] {
                    oracle.insert(n, spec.clone());
                }
                Ok(Box::new(oracle))
            }
            BackendSpec::Remote { url } => Ok(Box::new(RemoteOracle::connect(url)?)),
        }
    }

    /// Substitution source: an explicit table wins, remote backends fall back
    /// to the server, synthetic ones to none.
    pub fn substitutes(
        &self,
        table: Option<&Path>,
        disabled: bool,
    ) -> Result<Box<dyn SubstitutionProvider>, Error> {
        if disabled {
            return Ok(Box::new(NoSubstitutes));
        }
        match (table, self) {
            (Some(path), _) => Ok(Box::new(TableProvider::from_reader(open(path)?)?)),
            (None, BackendSpec::Remote { url }) => Ok(Box::new(RemoteSubstitutes::new(url))),
            (None, BackendSpec::Synthetic { .. }) => Ok(Box::new(NoSubstitutes)),
        }
    }
}

pub(crate) fn open(path: &Path) -> Result<File, Error> {
    File::open(path).map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))
}
