//! Versioned on-disk artifacts.
//!
//! Every artifact starts with a single version line `restoretime-<kind> v<N>`
//! followed by a JSON body. Loaders refuse files whose kind or version differ.

use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};

pub const FORMAT_VERSION: u32 = 1;

pub fn version_line(kind: &str) -> String {
    format!("restoretime-{kind} v{FORMAT_VERSION}")
}

pub fn to_string<T: Serialize>(kind: &str, value: &T) -> Result<String> {
    let body = serde_json::to_string(value)?;
    Ok(format!("{}\n{}\n", version_line(kind), body))
}

pub fn from_str<T: DeserializeOwned>(kind: &str, text: &str) -> Result<T> {
    let (header, body) = text
        .split_once('\n')
        .ok_or_else(|| Error::Artifact(format!("empty {kind} artifact")))?;
    check_version_line(kind, header)?;
    Ok(serde_json::from_str(body)?)
}

/// Validates a version line, distinguishing wrong kinds from wrong versions.
pub fn check_version_line(kind: &str, header: &str) -> Result<()> {
    let expected = version_line(kind);
    let header = header.trim_end();
    if header == expected {
        return Ok(());
    }
    let prefix = format!("restoretime-{kind} v");
    if let Some(found) = header.strip_prefix(&prefix) {
        return Err(Error::Artifact(format!(
            "{kind} artifact has version {found}, this build reads version {FORMAT_VERSION}; regenerate it"
        )));
    }
    Err(Error::Artifact(format!(
        "expected a {kind} artifact (first line `{expected}`), found `{header}`"
    )))
}

pub fn save<T: Serialize>(path: &Path, kind: &str, value: &T) -> Result<()> {
    fs::write(path, to_string(kind, value)?).map_err(|e| Error::io(path, e))
}

pub fn load<T: DeserializeOwned>(path: &Path, kind: &str) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    from_str(kind, &text)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_and_version_check() {
        let text = to_string("demo", &vec![1.5f64, 2.0]).unwrap();
        assert!(text.starts_with("restoretime-demo v1\n"));
        let back: Vec<f64> = from_str("demo", &text).unwrap();
        assert_eq!(back, vec![1.5, 2.0]);

        let bumped = text.replacen("v1", "v9", 1);
        let err = from_str::<Vec<f64>>("demo", &bumped).unwrap_err();
        assert!(err.to_string().contains("version 9"));
        let wrong_kind = from_str::<Vec<f64>>("other", &text).unwrap_err();
        assert!(wrong_kind.to_string().contains("expected a other artifact"));
    }
}
