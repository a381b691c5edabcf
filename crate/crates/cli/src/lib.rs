//! Operator commands and the benchmark harness behind the `ncaudit` binary.

pub mod bench;
pub mod deploy;

use std::path::PathBuf;

use thiserror::Error;

use ncaudit_core::audit::AuditError;
use ncaudit_core::blocks::BlockError;
use ncaudit_core::cluster::ClusterError;
use ncaudit_core::extractor::ExtractError;
use ncaudit_core::ncrypt::CryptError;
use ncaudit_core::repair::RepairError;
use ncaudit_core::spacemac::MacError;

pub const SEED_ENV: &str = "NCAUDIT_SEED";

/// Process exit codes.
pub mod exit {
    pub const OK: i32 = 0;
    pub const REJECTED: i32 = 1;
    pub const USAGE: i32 = 2;
    pub const INTERNAL: i32 = 3;
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error(transparent)]
    Audit(#[from] AuditError),
    #[error(transparent)]
    Block(#[from] BlockError),
    #[error(transparent)]
    Mac(#[from] MacError),
    #[error(transparent)]
    Crypt(#[from] CryptError),
    #[error(transparent)]
    Repair(#[from] RepairError),
    #[error(transparent)]
    Extract(#[from] ExtractError),
    #[error(transparent)]
    Cluster(#[from] ClusterError),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => exit::USAGE,
            CliError::Io { source, .. } if source.kind() == std::io::ErrorKind::NotFound => exit::USAGE,
            CliError::Block(BlockError::Params(_) | BlockError::FileTooLarge { .. }) => exit::USAGE,
            _ => exit::INTERNAL,
        }
    }
}

/// Parses a seed written in hex, with or without a `0x` prefix.
pub fn parse_seed(text: &str) -> Result<u64, CliError> {
    let t = text.trim();
    let t = t.strip_prefix("0x").or_else(|| t.strip_prefix("0X")).unwrap_or(t);
    u64::from_str_radix(t, 16).map_err(|_| CliError::Usage(format!("seed {text:?} is not a hex u64")))
}

/// `--seed` if given, else `NCAUDIT_SEED`, else fresh entropy.
pub fn resolve_seed(flag: Option<&str>) -> Result<u64, CliError> {
    match flag {
        Some(s) => parse_seed(s),
        None => match std::env::var(SEED_ENV) {
            Ok(s) => parse_seed(&s),
            Err(_) => Ok(rand::random()),
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seeds_parse_as_hex() {
        assert_eq!(parse_seed("ff").unwrap(), 255);
        assert_eq!(parse_seed("0x10").unwrap(), 16);
        assert!(parse_seed("xyz").is_err());
        assert_eq!(parse_seed("zz").unwrap_err().exit_code(), exit::USAGE);
    }
}
