//! File formats, experiment configuration, checkpoints and the command
//! implementations behind the `mmc` binary.

pub mod checkpoint;
pub mod config;
pub mod mmfb;
pub mod run;
