use std::fmt::Display;

use guti_core::Error;

/// Which side of the exit-code contract an error falls on.
#[derive(Debug)]
pub enum Failure {
    User(anyhow::Error),
    Internal(anyhow::Error),
}

pub type CmdResult<T = ()> = Result<T, Failure>;

impl From<Error> for Failure {
    /// Library errors are blamed on the inputs unless they come from the
    /// model internals.
    fn from(e: Error) -> Self {
        match e {
            Error::Model(_) => Failure::Internal(e.into()),
            _ => Failure::User(e.into()),
        }
    }
}

pub fn user(msg: impl Display) -> Failure {
    Failure::User(anyhow::anyhow!("{msg}"))
}

pub trait Context<T> {
    /// Any failure here is a user error, described by `what`.
    fn user_ctx(self, what: impl FnOnce() -> String) -> CmdResult<T>;
    /// Any failure here is an internal error (e.g. writing outputs).
    fn internal_ctx(self, what: impl FnOnce() -> String) -> CmdResult<T>;
}

impl<T, E: Into<anyhow::Error>> Context<T> for Result<T, E> {
    fn user_ctx(self, what: impl FnOnce() -> String) -> CmdResult<T> {
        self.map_err(|e| Failure::User(e.into().context(what())))
    }

    fn internal_ctx(self, what: impl FnOnce() -> String) -> CmdResult<T> {
        self.map_err(|e| Failure::Internal(e.into().context(what())))
    }
}
