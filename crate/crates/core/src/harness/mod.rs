//! Experiment orchestration: configuration, end-to-end runs, sweeps, external
//! data ingestion and plot-data export.

pub mod config;
pub mod external;
pub mod plot;
pub mod run;

pub use config::{ExperimentConfig, Grid, NoiseConfig};
pub use external::{ingest_external, ExternalPair};
pub use plot::{emit_plot_data, PlotRow, XVar};
pub use run::{run_experiment, sweep, ResultRecord};
