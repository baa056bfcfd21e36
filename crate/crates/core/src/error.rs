use std::path::PathBuf;

use crate::grid::Cell;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(thiserror::Error, Debug)]
pub enum Error {
    #[error("point ({x}, {y}) lies outside the grid")]
    OutOfBounds { x: f64, y: f64 },
    #[error("cell ({}, {}) lies outside the grid", .0.i, .0.j)]
    CellOutOfBounds(Cell),
    #[error("no path from ({}, {}) to ({}, {})", .start.i, .start.j, .goal.i, .goal.j)]
    NoPath { start: Cell, goal: Cell },
    #[error("landmark coincides with the camera center")]
    DegenerateLandmark,
    #[error("candidate set is empty")]
    EmptyCandidateSet,
    #[error("path blocked at ({}, {})", .0.i, .0.j)]
    PathBlocked(Cell),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("parse error on line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
