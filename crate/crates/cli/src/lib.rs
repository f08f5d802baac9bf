//! Command-line front end: config parsing and one function per subcommand.

pub mod commands;
pub mod config;

pub use commands::{
    cmd_ablate, cmd_compare, cmd_init, cmd_report, cmd_split, cmd_stats, cmd_synth, cmd_train,
};
pub use config::{load_config, parse_config, ConfigFile, LoadedConfig};
