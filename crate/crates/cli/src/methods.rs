//! Shared loading and method-table construction for the subcommands.

use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use clap::ValueEnum;
use serde::{Deserialize, Serialize};

use selconf::acr::{acr_table, AcrHeads};
use selconf::confidence::{doctor_table, mcd_table, msp_table, oracle_table, vs_table, VsParams};
use selconf::dataset::{parse_records, parse_records_auto, ConfidenceTable, EvalSet, Split};
use selconf::neural::TrainConfig;
use selconf::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Method {
    Msp,
    Mcd,
    Vs,
    Doctor,
    Acr,
    Oracle,
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Msp => "msp",
            Method::Mcd => "mcd",
            Method::Vs => "vs",
            Method::Doctor => "doctor",
            Method::Acr => "acr",
            Method::Oracle => "oracle",
        }
    }
}

/// Heads file: the trained pair plus enough metadata to reproduce it.
#[derive(Serialize, Deserialize)]
pub struct HeadsFile {
    pub heads: AcrHeads,
    pub train_config: TrainConfig,
    pub train_set: String,
    pub val_set: String,
}

pub fn load_records(path: &Path, k: Option<usize>, d: Option<usize>) -> Result<EvalSet> {
    let reader = BufReader::new(File::open(path)?);
    let provenance = format!("file {}", path.display());
    match (k, d) {
        (Some(k), Some(d)) => parse_records(reader, k, d, Split::Test, provenance),
        (None, None) => parse_records_auto(reader, Split::Test, provenance),
        _ => Err(Error::InvalidArgument(
            "supply both --k-classes and --feat-dim or neither".into(),
        )),
    }
}

pub fn load_vs(path: &Path) -> Result<VsParams> {
    let reader = BufReader::new(File::open(path)?);
    serde_json::from_reader(reader).map_err(|e| Error::Parse {
        line: 0,
        msg: format!("{}: {e}", path.display()),
    })
}

pub fn load_heads(path: &Path) -> Result<HeadsFile> {
    let reader = BufReader::new(File::open(path)?);
    serde_json::from_reader(reader).map_err(|e| Error::Parse {
        line: 0,
        msg: format!("{}: {e}", path.display()),
    })
}

pub fn save_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let json = serde_json::to_string_pretty(value)
        .map_err(|e| Error::Io(std::io::Error::other(e)))?;
    std::fs::write(path, json + "\n")?;
    Ok(())
}

/// Build the confidence table of one method, loading auxiliary files lazily.
pub fn method_table(
    method: Method,
    set: &EvalSet,
    heads_path: Option<&PathBuf>,
    vs_path: Option<&PathBuf>,
) -> Result<ConfidenceTable> {
    match method {
        Method::Msp => msp_table(set),
        Method::Doctor => doctor_table(set),
        Method::Mcd => mcd_table(set),
        Method::Oracle => oracle_table(set),
        Method::Vs => {
            let path = vs_path.ok_or_else(|| {
                Error::InvalidArgument("method vs requires --vs-params".into())
            })?;
            vs_table(&load_vs(path)?, set)
        }
        Method::Acr => {
            let path = heads_path.ok_or_else(|| {
                Error::InvalidArgument("method acr requires --heads".into())
            })?;
            acr_table(&load_heads(path)?.heads, set)
        }
    }
}

pub fn parse_risks(spec: &str) -> Result<Vec<f64>> {
    let risks = spec
        .split(',')
        .map(|tok| {
            tok.trim()
                .parse::<f64>()
                .map_err(|e| Error::InvalidArgument(format!("bad risk {tok:?}: {e}")))
        })
        .collect::<Result<Vec<_>>>()?;
    for &r in &risks {
        if !(0.0..1.0).contains(&r) {
            return Err(Error::InvalidArgument(format!(
                "target risk must lie in [0,1), got {r}"
            )));
        }
    }
    Ok(risks)
}
