//! JSON reading and writing of negotiations.

use std::fs;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::model::{self, ModelError, Negotiation, RawNegotiation};

#[derive(Debug, Error)]
pub enum ParseError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("line {line}, column {column}: {message}")]
    Syntax {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("{0}")]
    Invalid(#[from] ModelError),
}

pub fn parse_str(text: &str) -> Result<Negotiation, ParseError> {
    let raw: RawNegotiation = serde_json::from_str(text).map_err(|e| ParseError::Syntax {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    Ok(model::validate(&raw)?)
}

pub fn parse(path: &Path) -> Result<Negotiation, ParseError> {
    let text = fs::read_to_string(path).map_err(|source| ParseError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_str(&text)
}

/// Canonical pretty-printed JSON, newline-terminated.
pub fn serialize(n: &Negotiation) -> String {
    let mut s = serde_json::to_string_pretty(&model::to_raw(n)).expect("raw negotiations serialize");
    s.push('\n');
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cli::fixtures;

    #[test]
    fn serialization_is_a_fixpoint() {
        for name in fixtures::NAMES {
            let n = fixtures::load(name).unwrap();
            let once = serialize(&n);
            let back = parse_str(&once).unwrap();
            assert_eq!(back, n, "{name}");
            assert_eq!(serialize(&back), once, "{name}");
        }
    }

    #[test]
    fn syntax_errors_carry_positions() {
        match parse_str("{\n  \"agents\": [\"A\"],\n  \"atoms\": 3\n}") {
            Err(ParseError::Syntax { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
        assert!(matches!(
            parse_str("{\"agents\": [], \"bogus\": 1}"),
            Err(ParseError::Syntax { .. })
        ));
    }

    #[test]
    fn missing_party_in_next_is_rejected() {
        let mut v: serde_json::Value =
            serde_json::from_str(fixtures::source("merge_demo").unwrap()).unwrap();
        let next = v["atoms"][0]["results"][0]["next"].as_object_mut().unwrap();
        next.remove("B");
        let text = v.to_string();
        let err = parse_str(&text).unwrap_err();
        assert!(matches!(err, ParseError::Invalid(_)), "{err}");
    }
}
