//! Library side of the `nhk-lab` binary: expression parsing, manifests,
//! reports and the command implementations.

pub mod commands;
pub mod expr;
pub mod manifest;
pub mod report;
