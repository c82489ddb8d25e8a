//! Error kinds that decide the process exit code.

use std::fmt;

/// Bad command line or configuration.
#[derive(Debug)]
pub struct UsageError(pub String);

/// An input file that is missing or violates its schema.
#[derive(Debug)]
pub struct InputError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl fmt::Display for InputError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}
impl std::error::Error for InputError {}

pub const EXIT_OTHER: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_INPUT: i32 = 3;
pub const EXIT_NUMERIC: i32 = 4;
pub const EXIT_RUN: i32 = 5;

/// Exit code for an error chain: the first recognised cause wins.
pub fn exit_code(err: &anyhow::Error) -> i32 {
    use flowinfer_core::Error as E;
    for cause in err.chain() {
        if cause.is::<UsageError>() {
            return EXIT_USAGE;
        }
        if cause.is::<InputError>() {
            return EXIT_INPUT;
        }
        if let Some(e) = cause.downcast_ref::<E>() {
            return match e {
                E::Usage(_) => EXIT_USAGE,
                E::Structural(_) | E::Ingestion(_) | E::Gap(_) => EXIT_INPUT,
                E::Domain(_) | E::Estimation(_) | E::Convergence { .. } | E::Numeric(_) => EXIT_NUMERIC,
                E::Run(_) => EXIT_RUN,
            };
        }
    }
    EXIT_OTHER
}
