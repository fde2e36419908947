//! Canonical JSON: object keys sorted, no insignificant whitespace, floats
//! in shortest round-trip form. Used for config echoes and reports so equal
//! values always serialize to equal bytes.

use serde::Serialize;

use crate::error::Result;

pub fn canonical_json<T: Serialize>(value: &T) -> Result<String> {
    // serde_json's Value map is a BTreeMap, so going through it sorts keys.
    let v = serde_json::to_value(value)?;
    Ok(serde_json::to_string(&v)?)
}

/// Short hex digest of the canonical JSON of `value`.
pub fn config_hash<T: Serialize>(value: &T) -> Result<String> {
    let text = canonical_json(value)?;
    Ok(format!("{:08x}", crc32fast::hash(text.as_bytes())))
}
