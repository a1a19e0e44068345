//! Command-line harness: configs, manifests, training and evaluation
//! commands, and reports.

pub mod config;
pub mod report;
pub mod run;

use aet_core::Error;

/// Process exit status for an error.
pub fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::Contract(_) => 2,
        Error::Numerical(_) => 4,
        _ => 3,
    }
}
