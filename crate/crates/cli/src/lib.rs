//! Experiment harness for meta-learned critics: toy verification,
//! meta-training, policy learning with frozen critics, landscapes and
//! generalization sweeps.

pub mod checks;
pub mod commands;
pub mod config;
pub mod experiment;
pub mod manifest;
pub mod report;
