//! Command-line front end and evaluation harness for the RAHT codec.

pub mod eval;
pub mod metrics;
pub mod ply_io;
pub mod selftest;
pub mod synth;
