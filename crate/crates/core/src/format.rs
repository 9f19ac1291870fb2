//! Shared helpers for the versioned TOML file formats.

use crate::error::FormatError;

pub(crate) fn toml_error(e: toml::de::Error, text: &str) -> FormatError {
    let line = e
        .span()
        .map(|s| text[..s.start.min(text.len())].lines().count().max(1))
        .unwrap_or(0);
    FormatError::parse(line, e.message().to_string())
}

/// Reads the `format` key first so version errors win over schema errors.
pub(crate) fn check_format(text: &str, supported: u32) -> Result<(), FormatError> {
    let value: toml::Value = text.parse().map_err(|e| toml_error(e, text))?;
    match value.get("format") {
        Some(toml::Value::Integer(v)) if *v == supported as i64 => Ok(()),
        Some(other) => Err(FormatError::UnsupportedFormat {
            found: other.to_string(),
            supported,
        }),
        None => Err(FormatError::parse(1, "missing `format` header")),
    }
}

/// Parses a versioned TOML document into `T`.
pub(crate) fn parse_versioned<T: serde::de::DeserializeOwned>(
    text: &str,
    supported: u32,
) -> Result<T, FormatError> {
    check_format(text, supported)?;
    toml::from_str(text).map_err(|e| toml_error(e, text))
}
