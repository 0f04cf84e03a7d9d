//! Miura-ori bar-and-hinge dynamics used as a physical reservoir computer.

pub mod config;
pub mod dynamics;
mod error;
pub mod experiments;
pub mod locomotion;
pub mod pattern;
pub mod reservoir;
pub mod sweep;
pub mod tasks;

pub use error::{Error, Result};
