//! Frontier exploration with information-aware goal selection.

pub mod error;
pub mod fisher;
pub mod frontier;
pub mod grid;
pub mod harness;
pub mod infogain;
pub mod planner;
pub mod simworld;
pub mod traversability;
pub mod utility;

pub use error::{Error, Result};
