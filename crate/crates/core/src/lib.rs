//! Collaborative clustering and classification of sequence-of-sequences
//! telemetry.

pub mod bridge;
pub mod checkpoint;
pub mod classifier;
pub mod data;
pub mod evaluation;
pub mod interpreter;
pub mod numerics;
pub mod training;
