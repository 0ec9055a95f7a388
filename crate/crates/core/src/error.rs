use thiserror::Error;

use crate::network::Violation;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid network: {}", join(.0))]
    InvalidNetwork(Vec<Violation>),

    #[error("no route from {origin} to {destination}")]
    Unreachable { origin: String, destination: String },

    #[error("od pair {0} has an empty route set")]
    EmptyRouteSet(usize),

    #[error("seed scaling undefined: no demand in the prior can reach any sensor")]
    InfeasibleSeed,

    #[error("route {route} expects {expected} trips, more than one departure per second over {delta} s")]
    BernoulliOverflow {
        route: String,
        expected: f64,
        delta: f64,
    },

    #[error("unknown link {0}")]
    UnknownLink(String),

    #[error("unknown node {0}")]
    UnknownNode(String),

    #[error("frame {got} arrived out of order, expected frame {expected}")]
    OutOfOrderFrame { expected: usize, got: usize },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("metric undefined: {0}")]
    Metric(&'static str),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

fn join(v: &[Violation]) -> String {
    v.iter().map(ToString::to_string).collect::<Vec<_>>().join("; ")
}
