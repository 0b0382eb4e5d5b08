//! Mapping of failures to process exit codes.

use std::fmt;

/// Input or argument that violates a command's precondition.
#[derive(Debug)]
pub struct Precondition(pub String);

impl fmt::Display for Precondition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Precondition {}

/// Shorthand for failing with a [`Precondition`].
pub fn precondition<T>(msg: impl Into<String>) -> anyhow::Result<T> {
    Err(Precondition(msg.into()).into())
}

pub const SUCCESS: i32 = 0;
pub const PRECONDITION: i32 = 2;
pub const IO: i32 = 3;
pub const INVARIANT: i32 = 4;

/// Exit code for an error: 3 for I/O failures, 4 for broken internal
/// invariants, 2 for everything else (bad input, bad arguments).
pub fn exit_code(err: &anyhow::Error) -> i32 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<spikekit::Error>() {
            return match e {
                spikekit::Error::Io { .. } => IO,
                spikekit::Error::Invariant(_) => INVARIANT,
                _ => PRECONDITION,
            };
        }
        if cause.downcast_ref::<std::io::Error>().is_some() {
            return IO;
        }
        if let Some(e) = cause.downcast_ref::<image::ImageError>() {
            return match e {
                image::ImageError::IoError(_) => IO,
                _ => PRECONDITION,
            };
        }
        if let Some(e) = cause.downcast_ref::<serde_json::Error>() {
            return if e.is_io() { IO } else { PRECONDITION };
        }
    }
    PRECONDITION
}
