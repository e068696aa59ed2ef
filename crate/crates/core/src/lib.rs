//! Learned path ranking workbench for a planar arm.

pub mod error;
pub mod generators;
pub mod kinematics;
pub mod nn;
pub mod policy;
pub mod ranker;
pub mod replay;
pub mod trainer;
pub mod world;

pub use error::{Error, Result};
