use std::fmt;
use std::process::ExitCode;

use fairalloc_core::Error;

pub const USAGE: u8 = 2;
pub const EMPTY: u8 = 3;
pub const IO: u8 = 4;

/// An error message paired with the process exit code it maps to.
#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub message: String,
}

impl Failure {
    pub fn usage(message: impl Into<String>) -> Self {
        Self {
            code: USAGE,
            message: message.into(),
        }
    }

    pub fn empty(message: impl Into<String>) -> Self {
        Self {
            code: EMPTY,
            message: message.into(),
        }
    }

    pub fn io(message: impl Into<String>) -> Self {
        Self {
            code: IO,
            message: message.into(),
        }
    }

    pub fn report(&self) -> ExitCode {
        eprintln!("error: {self}");
        ExitCode::from(self.code)
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::EmptyIntersection | Error::EmptyHorizon | Error::NoComparableBuckets { .. } => {
                EMPTY
            }
            Error::FileNotFound(_) | Error::Io(_) => IO,
            _ => USAGE,
        };
        Self {
            code,
            message: e.to_string(),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Self::io(e.to_string())
    }
}
