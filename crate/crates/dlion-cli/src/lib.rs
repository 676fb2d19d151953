//! Command layer behind the `dlion` binary: strict TOML config loading and
//! the run, sweep, check, and bandwidth commands. The binary itself is a
//! thin clap dispatcher that maps library errors to exit codes.

pub mod commands;
pub mod config;

/// Exit code for a failed command: 3 for divergence, 1 for a violated
/// runtime property, 2 for everything the caller can fix (usage, config,
/// bad files, I/O).
pub fn exit_code(err: &dlion::Error) -> u8 {
    use dlion::Error;
    match err {
        Error::Divergence { .. } => 3,
        Error::ContractViolation(_) | Error::Inconsistency(_) => 1,
        Error::InvalidInput(_)
        | Error::InvalidParameter(_)
        | Error::CorruptStream(_)
        | Error::CsvCell { .. }
        | Error::Config(_)
        | Error::Io(_) => 2,
    }
}
