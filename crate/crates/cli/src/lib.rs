//! Configuration schema, manifests, and command implementations behind the
//! `dram` binary, exposed as a library so integration tests can reuse them.

pub mod config;
pub mod manifest;
pub mod run;
