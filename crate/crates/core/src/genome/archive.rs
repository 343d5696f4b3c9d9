//! Versioned JSON genome archive.
//!
//! ```json
//! { "format": "evocnn-genome", "version": 1, "genome": { ... } }
//! ```
//!
//! Weights are written with shortest round-trip formatting and parsed with
//! exact rounding, so a decode of an encode is bit-identical.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{Genome, GenomeError};

pub const GENOME_FORMAT: &str = "evocnn-genome";
pub const GENOME_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ArchiveError {
    #[error("malformed genome archive: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("not a genome archive (format {0:?})")]
    Format(String),
    #[error("unsupported genome archive version {0}")]
    Version(u32),
    #[error("archived genome violates an invariant: {0}")]
    Invalid(#[from] GenomeError),
}

#[derive(Serialize)]
struct EnvelopeRef<'a> {
    format: &'a str,
    version: u32,
    genome: &'a Genome,
}

#[derive(Deserialize)]
struct Header {
    format: String,
    version: u32,
}

#[derive(Deserialize)]
struct Envelope {
    genome: Genome,
}

pub fn serialize(genome: &Genome) -> Vec<u8> {
    serde_json::to_vec(&EnvelopeRef {
        format: GENOME_FORMAT,
        version: GENOME_VERSION,
        genome,
    })
    .expect("genome serialization cannot fail")
}

pub fn deserialize(bytes: &[u8]) -> Result<Genome, ArchiveError> {
    let header: Header = serde_json::from_slice(bytes)?;
    if header.format != GENOME_FORMAT {
        return Err(ArchiveError::Format(header.format));
    }
    if header.version != GENOME_VERSION {
        return Err(ArchiveError::Version(header.version));
    }
    let Envelope { genome } = serde_json::from_slice(bytes)?;
    genome.validate()?;
    Ok(genome)
}
