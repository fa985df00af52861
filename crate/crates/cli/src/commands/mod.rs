pub mod deconvolve;
pub mod distributions;
pub mod evaluate;
pub mod fit;
pub mod predict;
pub mod preprocess;
pub mod sequential;
pub mod simulate;

use std::path::Path;

use crate::error::{CliError, CliResult};
use crate::io::{sha256_file, InputDigest};

/// Maps a library parameter error raised by flag values onto a usage error naming the flag.
pub(crate) fn flag_error(err: renewal_mcmc_core::Error) -> CliError {
    match err {
        renewal_mcmc_core::Error::Parameter { name, reason } => {
            CliError::Usage(format!("--{}: {reason}", name.replace('_', "-")))
        }
        other => other.into(),
    }
}

pub(crate) fn digests(paths: &[&Path]) -> CliResult<Vec<InputDigest>> {
    paths.iter().map(|p| sha256_file(p)).collect()
}
