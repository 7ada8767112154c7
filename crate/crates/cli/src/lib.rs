//! Experiment front end: configuration, dataset wiring, artifact emission
//! and the subcommand implementations behind the `fedflow` binary. The
//! pieces live in a library so integration tests can drive the exact same
//! code paths the binary runs.

pub mod artifacts;
pub mod commands;
pub mod config;
pub mod pipeline;

use fedflow_core::error::Error;

/// Process exit code for an error: 2 configuration, 3 data, 4 runtime.
pub fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Config(_) => 2,
        Error::Parse { .. }
        | Error::Schema(_)
        | Error::Gap(_)
        | Error::EmptyInput(_)
        | Error::Checkpoint(_)
        | Error::Comparison(_)
        | Error::Io(_) => 3,
        Error::Shape(_) | Error::Numeric(_) => 4,
    }
}
