//! Native JSON case format: the [`PowerNetwork`] fields verbatim under a
//! versioned envelope.

use super::{GridError, ParsedCase, PowerNetwork};
use serde::{Deserialize, Serialize};

/// Current schema version written by [`serialize`].
pub const SCHEMA_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct NetworkFile {
    schema_version: u32,
    network: PowerNetwork,
}

pub(super) fn parse(text: &str, path: &str) -> Result<ParsedCase, GridError> {
    let file: NetworkFile = serde_json::from_str(text).map_err(|e| GridError::Parse {
        path: path.to_string(),
        line: e.line(),
        message: e.to_string(),
    })?;
    if file.schema_version != SCHEMA_VERSION {
        return Err(GridError::Validation(format!(
            "unsupported schema_version {} (expected {SCHEMA_VERSION})",
            file.schema_version
        )));
    }
    file.network.validate()?;
    Ok(ParsedCase {
        network: file.network,
        warnings: Vec::new(),
    })
}

pub(super) fn serialize(net: &PowerNetwork) -> String {
    let file = NetworkFile {
        schema_version: SCHEMA_VERSION,
        network: net.clone(),
    };
    serde_json::to_string_pretty(&file).expect("network serialization cannot fail")
}
