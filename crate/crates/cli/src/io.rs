use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use r2sl_core::dataset::{read_records_csv, write_records_csv, DatasetMeta};
use r2sl_core::{QosRecord, R2slNetwork, RegionalLatentModel};
use serde::de::DeserializeOwned;

use crate::error::{CliError, CliResult};

pub fn read_text(path: &Path) -> CliResult<String> {
    std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))
}

pub fn write_text(path: &Path, text: &str) -> CliResult<()> {
    ensure_parent(path)?;
    std::fs::write(path, text).map_err(|e| CliError::io(path, e))
}

pub fn ensure_parent(path: &Path) -> CliResult<()> {
    match path.parent() {
        Some(dir) if !dir.as_os_str().is_empty() => std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e)),
        _ => Ok(()),
    }
}

pub fn create(path: &Path) -> CliResult<BufWriter<File>> {
    ensure_parent(path)?;
    Ok(BufWriter::new(File::create(path).map_err(|e| CliError::io(path, e))?))
}

pub fn read_records(path: &Path) -> CliResult<Vec<QosRecord>> {
    let file = File::open(path).map_err(|e| CliError::io(path, e))?;
    Ok(read_records_csv(file)?)
}

pub fn write_records(path: &Path, records: &[QosRecord]) -> CliResult<()> {
    write_records_csv(create(path)?, records)?;
    Ok(())
}

pub fn read_meta(path: &Path) -> CliResult<DatasetMeta> {
    Ok(DatasetMeta::from_json(&read_text(path)?)?)
}

pub fn read_latent(path: &Path) -> CliResult<RegionalLatentModel> {
    Ok(RegionalLatentModel::from_json(&read_text(path)?)?)
}

/// Network plus the hash of the latent model it was trained against.
pub fn read_network(path: &Path) -> CliResult<(R2slNetwork, String)> {
    let (net, hash, _) = R2slNetwork::from_json(&read_text(path)?)?;
    Ok((net, hash))
}

/// Parses a TOML file; a missing path yields the type's default.
pub fn read_toml<T: DeserializeOwned + Default>(path: Option<&Path>) -> CliResult<T> {
    match path {
        None => Ok(T::default()),
        Some(p) => toml::from_str(&read_text(p)?).map_err(|e| CliError::Config {
            path: p.display().to_string(),
            msg: e.to_string(),
        }),
    }
}
