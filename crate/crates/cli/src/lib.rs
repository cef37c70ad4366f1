//! Library surface of the experiment runner, separated from the binary so
//! integration tests can drive the exact code paths of the CLI.

pub mod config;
pub mod costs;
pub mod experiment;
pub mod verify_cmd;
