//! Scenario loading: TOML files or built-in gallery names.

use std::path::Path;

use ddft_core::loophole::{example_gallery, GALLERY};
use ddft_core::Scenario;

use crate::error::CliError;

pub fn load(config: Option<&Path>, name: Option<&str>, seed: Option<u64>) -> Result<Scenario, CliError> {
    let mut s = match (config, name) {
        (Some(path), None) => parse(&std::fs::read_to_string(path)?)?,
        (None, Some(name)) => example_gallery(name).map_err(|_| {
            CliError::Usage(format!("unknown scenario '{name}' (built-in: {})", GALLERY.join(", ")))
        })?,
        (Some(_), Some(_)) => return Err(CliError::Usage("give either --config or a scenario name, not both".into())),
        (None, None) => return Err(CliError::Usage("need --config PATH or a built-in scenario name".into())),
    };
    if let Some(seed) = seed {
        s.seed = seed;
    }
    s.validate()?;
    Ok(s)
}

pub fn parse(text: &str) -> Result<Scenario, CliError> {
    Ok(toml::from_str(text)?)
}

pub fn render(s: &Scenario) -> Result<String, CliError> {
    toml::to_string(s).map_err(|e| CliError::Usage(format!("cannot serialize scenario: {e}")))
}
