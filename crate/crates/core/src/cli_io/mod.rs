//! Configuration, snapshots, diagnostics output and the command-line driver.

pub mod app;
pub mod config;
pub mod diagnostics_csv;
pub mod snapshot;

pub use config::{parse_config, ConfigError, RunConfig};
pub use diagnostics_csv::DiagnosticsWriter;
pub use snapshot::{read_snapshot, write_snapshot, Snapshot, SnapshotError};
