//! Monte Carlo experiments for the OTFS turbo equalizer: BER sweeps, solver
//! residual traces, `xi` spread and factor sparsity, written as CSV.

pub mod cli;
pub mod config;
pub mod experiments;
pub mod output;
pub mod seeds;

pub use config::{LinkKind, Mode, OracleXi, SimConfig};

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("numerical failure: {0}")]
    Numerical(otfs_core::Error),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl HarnessError {
    /// Process exit status for the CLI.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Config(_) => 2,
            HarnessError::Numerical(_) => 3,
            HarnessError::Io(_) | HarnessError::Csv(_) => 1,
        }
    }
}

impl From<otfs_core::Error> for HarnessError {
    fn from(e: otfs_core::Error) -> Self {
        use otfs_core::Error as E;
        match e {
            E::NotConverged { .. } | E::Indefinite { .. } | E::NonPositiveDiagonal { .. } => {
                HarnessError::Numerical(e)
            }
            other => HarnessError::Config(other.to_string()),
        }
    }
}

/// `N0` for unit-energy symbols: `1 / (rate * bits_per_symbol * 10^(ebn0/10))`.
pub fn noise_from_ebn0(ebn0_db: f64, rate: f64, bits_per_symbol: f64) -> f64 {
    1.0 / (rate * bits_per_symbol * 10f64.powf(ebn0_db / 10.0))
}
