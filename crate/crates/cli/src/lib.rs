//! Command-line front end of the `vanroos` simulator: deck parsing, the
//! `run`, `sweep` and `verify` commands, and CSV/JSON output.

pub mod config;
pub mod output;
pub mod run;
pub mod sweep;
pub mod verify;

pub use config::{parse_config, ConfigError, SimulationConfig};

/// Decks shipped with the crate.
pub mod decks {
    pub const DIODE: &str = include_str!("../decks/diode.toml");
    pub const TWO_LAYER_INTERFACE: &str = include_str!("../decks/two-layer-interface.toml");
    pub const INSULATED: &str = include_str!("../decks/insulated.toml");
    pub const EQUILIBRIUM: &str = include_str!("../decks/equilibrium.toml");
    pub const AVALANCHE_RUNAWAY: &str = include_str!("../decks/avalanche-runaway.toml");
    pub const SRH_TWO_CELL: &str = include_str!("../decks/srh-two-cell.toml");

    pub const ALL: &[(&str, &str)] = &[
        ("diode", DIODE),
        ("two-layer-interface", TWO_LAYER_INTERFACE),
        ("insulated", INSULATED),
        ("equilibrium", EQUILIBRIUM),
        ("avalanche-runaway", AVALANCHE_RUNAWAY),
        ("srh-two-cell", SRH_TWO_CELL),
    ];
}

/// Process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExitStatus {
    Complete = 0,
    Failure = 1,
    Usage = 2,
    BlowUp = 3,
}

impl ExitStatus {
    pub fn code(self) -> i32 {
        self as i32
    }
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Solver(#[from] vanroos::Error),
    #[error("{0}")]
    Io(String),
    #[error("usage: {0}")]
    Usage(String),
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

impl CliError {
    pub fn exit_status(&self) -> ExitStatus {
        match self {
            CliError::Usage(_) => ExitStatus::Usage,
            _ => ExitStatus::Failure,
        }
    }
}
