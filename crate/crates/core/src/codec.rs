//! Canonical binary encoding for every protocol object.
//!
//! A single leading format byte precedes a bincode body with variable-length
//! integers and length-prefixed sequences. Decoding rejects unknown format
//! bytes, oversize inputs and trailing garbage, so each value has exactly one
//! accepted encoding.

use bincode::Options;
use serde::de::DeserializeOwned;
use serde::Serialize;
use thiserror::Error;

pub const FORMAT_TAG: u8 = 1;

/// Upper bound on any decoded object.
pub const MAX_ENCODED_LEN: u64 = 64 * 1024 * 1024;

#[derive(Debug, Error)]
pub enum CodecError {
    #[error("empty input")]
    Empty,
    #[error("unknown format tag {0}")]
    UnknownFormat(u8),
    #[error("malformed body: {0}")]
    Malformed(#[from] bincode::Error),
}

fn options() -> impl Options {
    bincode::DefaultOptions::new()
        .with_varint_encoding()
        .with_limit(MAX_ENCODED_LEN)
        .reject_trailing_bytes()
}

/// Encodes without the format tag. Used for signature and hash inputs.
pub fn to_bytes<T: Serialize>(value: &T) -> Vec<u8> {
    options()
        .serialize(value)
        .expect("in-memory serialization of protocol types cannot fail")
}

pub fn from_bytes<T: DeserializeOwned>(bytes: &[u8]) -> Result<T, CodecError> {
    Ok(options().deserialize(bytes)?)
}

pub fn encode<T: Serialize>(value: &T) -> Vec<u8> {
    let mut out = vec![FORMAT_TAG];
    out.extend_from_slice(&to_bytes(value));
    out
}

pub fn decode<T: DeserializeOwned>(bytes: &[u8]) -> Result<T, CodecError> {
    match bytes.split_first() {
        None => Err(CodecError::Empty),
        Some((&FORMAT_TAG, body)) => from_bytes(body),
        Some((&tag, _)) => Err(CodecError::UnknownFormat(tag)),
    }
}
