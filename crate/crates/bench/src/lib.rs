//! Synthetic scenes, the SVOX scene format, pipeline runs with timing and
//! MAC reports, and oracle verification suites for `sparseocc-core`.

pub mod config;
pub mod error;
pub mod report;
pub mod run;
pub mod scene;
pub mod scene_file;
pub mod verify;

pub use error::BenchError;
