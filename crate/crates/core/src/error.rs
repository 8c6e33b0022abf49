use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{what} = {value} lies outside [0, 1]")]
    Domain { what: &'static str, value: f64 },

    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),

    #[error("invalid market parameters: {0}")]
    InvalidParams(String),

    #[error("degenerate truncation at t = {0}: 1 - F(t) is below the floor")]
    DegenerateTruncation(f64),

    #[error("the separating schedule is undefined at price p = 0")]
    PriceZero,

    #[error("bracket failure: {0}")]
    Bracket(String),

    #[error("cutoff t0 = {t0} lies below the participation cutoff {t_lower}")]
    CutoffOutOfRange { t0: f64, t_lower: f64 },

    #[error("brute-force consumer search is limited to n <= {max} firms (got {n})")]
    TooManyFirms { n: usize, max: usize },

    #[error("mismatched inputs: {0}")]
    Mismatch(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}
