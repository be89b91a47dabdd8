//! Configuration, persistence and the campaign runner behind the CLI.

pub mod campaign;
pub mod config;
pub mod formats;
pub mod presets;

pub use campaign::{
    analyze_traces, fit_cooldown, init_thread_pool, run_analyze, run_campaign, run_pulse_tube, run_pulse_tube_protocol,
    run_report, run_simulate, simulate_point, AnalysisKind, Campaign, CampaignManifest, PointAnalysis, PulseTubePair,
};
pub use config::{load_config, parse_config, ExperimentConfig, SCHEMA_VERSION};
pub use formats::{read_trace, write_trace, Report, TraceMeta};
pub use presets::preset;
