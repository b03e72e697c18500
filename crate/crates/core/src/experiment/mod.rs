//! Config-driven sweeps over the number of rounds, the verification suite,
//! and CSV / JSON / SVG output.

pub mod config;
pub mod emit;
pub mod ingest;
pub mod svg;
pub mod sweep;
pub mod verify;

pub use config::{parse_config, DistSpec, ExperimentSpec};
pub use emit::{emit_csv, emit_json, parse_json, CSV_HEADER};
pub use ingest::{parse_samples_csv, read_samples_csv, CsvLayout};
pub use svg::emit_svg_plot;
pub use sweep::{run_sweep, run_sweep_in, ResultsRow, ResultsTable, TableMetadata};
pub use verify::{run_verify, VerifyReport};
