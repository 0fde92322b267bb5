//! Std companion to the engine crate: file formats, snapshots, the
//! command-line surface and multi-threaded evaluation.

pub mod commands;
pub mod io;
pub mod snapshot;
pub mod threaded;
