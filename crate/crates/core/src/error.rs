use crate::localfit::Side;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("input error: {0}")]
    Input(String),

    #[error("insufficient data on the {side} side: {count} observations, need {needed}")]
    DataSupport {
        side: Side,
        count: usize,
        needed: usize,
    },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("degenerate design: {0}")]
    Degenerate(String),
}

impl Error {
    /// True for errors caused by bad user input rather than numerics.
    pub fn is_input(&self) -> bool {
        matches!(self, Error::Input(_) | Error::DataSupport { .. })
    }
}

pub type Result<T> = std::result::Result<T, Error>;
