//! Library side of the `cost-unroll` binary: configuration, the run
//! pipeline, artifact writers and the verification suite.

pub mod config;
pub mod output;
pub mod plot;
pub mod run;
pub mod verify;
