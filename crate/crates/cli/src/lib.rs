//! Command implementations behind the `stamp` binary.

pub mod commands;
pub mod run_config;

pub use run_config::RunConfig;

use stamp_core::StampError;

/// Process exit codes.
pub mod exit {
    pub const OK: u8 = 0;
    /// A run diverged or a check failed; outputs may be partial.
    pub const INCOMPLETE: u8 = 1;
    pub const USAGE: u8 = 2;
    pub const IO: u8 = 3;
    /// Malformed file or shape mismatch between data, manifest and model.
    pub const DATA: u8 = 4;
    pub const OTHER: u8 = 5;
}

pub fn exit_code(e: &StampError) -> u8 {
    match e {
        StampError::Usage(_) | StampError::Config(_) => exit::USAGE,
        StampError::Io(_) => exit::IO,
        StampError::Data(_) | StampError::Format { .. } | StampError::Shape(_) => exit::DATA,
        StampError::Diverged { .. } | StampError::NonFiniteGradient { .. } => exit::INCOMPLETE,
        StampError::UndefinedMetric(_) | StampError::Json(_) => exit::OTHER,
    }
}
