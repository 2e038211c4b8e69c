//! Master secret files: 32 raw bytes or 64 hex digits.

use std::fs;
use std::path::{Path, PathBuf};

use concealer::crypto::MasterSecret;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use crate::error::{CliError, Result};

pub const MASTER_KEY_ENV: &str = "CONCEALER_MASTER_KEY_FILE";

pub fn parse_master(bytes: &[u8]) -> Result<MasterSecret> {
    if bytes.len() == 32 {
        return Ok(MasterSecret::from_slice(bytes)?);
    }
    let text = std::str::from_utf8(bytes).map_err(|_| bad_key())?.trim();
    let raw = hex::decode(text).map_err(|_| bad_key())?;
    if raw.len() != 32 {
        return Err(bad_key());
    }
    Ok(MasterSecret::from_slice(&raw)?)
}

fn bad_key() -> CliError {
    CliError::Usage("master key file must hold 32 raw bytes or 64 hex digits".into())
}

/// Explicit path first, then the environment variable.
pub fn key_path(explicit: Option<&Path>) -> Result<PathBuf> {
    match explicit {
        Some(p) => Ok(p.to_path_buf()),
        None => std::env::var_os(MASTER_KEY_ENV)
            .map(PathBuf::from)
            .ok_or_else(|| CliError::Usage(format!("no --key given and {MASTER_KEY_ENV} is unset"))),
    }
}

pub fn load_master(explicit: Option<&Path>) -> Result<MasterSecret> {
    parse_master(&fs::read(key_path(explicit)?)?)
}

/// Hex-encoded key; deterministic when seeded.
pub fn generate_hex(seed: Option<u64>) -> String {
    let m = match seed {
        Some(s) => MasterSecret::generate(&mut ChaCha20Rng::seed_from_u64(s)),
        None => MasterSecret::generate(&mut ChaCha20Rng::from_entropy()),
    };
    hex::encode(m.expose())
}
