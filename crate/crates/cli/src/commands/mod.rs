pub mod build;
pub mod dynamics;
pub mod gradcheck;
pub mod metrics;
pub mod train;

use std::path::Path;

use alab_core::{Error, PreferenceTriple};

use crate::error::CliError;

/// Library errors caused by bad settings are usage errors; the rest are
/// runtime failures.
pub fn classify(e: Error) -> CliError {
    match e {
        Error::InvalidArgument(m) => CliError::Usage(m),
        other => CliError::Runtime(other.into()),
    }
}

pub fn load_dataset(path: &Path) -> Result<Vec<PreferenceTriple>, CliError> {
    let data = alab_core::read_dataset(path)
        .map_err(|e| anyhow::anyhow!("reading dataset {}: {e}", path.display()))?;
    if data.is_empty() {
        return Err(anyhow::anyhow!("dataset {} is empty", path.display()).into());
    }
    Ok(data)
}
