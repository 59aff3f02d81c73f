//! TOML experiment configs. Every key is optional; omitted keys take the
//! published defaults. Unknown keys are rejected.

use std::path::Path;

use crate::error::{ConfigError, Result};
use crate::harness::ExperimentConfig;

fn line_col(text: &str, offset: usize) -> (usize, usize) {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let column = before
        .rfind('\n')
        .map_or(before.len(), |nl| before.len() - nl - 1)
        + 1;
    (line, column)
}

pub fn parse_config_str(text: &str) -> Result<ExperimentConfig> {
    let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| {
        let (line, column) = e.span().map_or((0, 0), |s| line_col(text, s.start));
        let message = e.message().to_string();
        if message.contains("unknown field") || message.contains("unknown variant") {
            ConfigError::UnknownKey {
                message,
                line,
                column,
            }
        } else {
            ConfigError::Parse {
                message,
                line,
                column,
            }
        }
    })?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn parse_config(path: impl AsRef<Path>) -> Result<ExperimentConfig> {
    parse_config_str(&std::fs::read_to_string(path)?)
}
