//! Experiment configuration: a flat TOML table with defaults for every key.

use crate::HarnessError;
use otfs_core::channel::ChannelStatistics;
use otfs_core::coding::{CodeConfig, DEFAULT_LLR_CLIP};
use otfs_core::equalizer::EqualizerConfig;
use otfs_core::frame::OtfsGrid;
use otfs_core::oracle::XiRule;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::path::Path;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    /// Sparse equalizer with the channel decoder in the loop.
    Turbo,
    /// Sparse equalizer fed back by its own extrinsic output.
    Uncoded,
    /// Exact first-iteration LMMSE.
    LmmseOracle,
    /// Exact dense MMSE at every outer iteration.
    ImmseOracle,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LinkKind {
    Turbo,
    Uncoded,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OracleXi {
    PerSymbol,
    /// The pilot column's exact value for every symbol.
    Shared,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub m: usize,
    pub n: usize,
    pub cp_len: usize,

    pub paths: usize,
    pub l_max: usize,
    pub k_max: usize,
    pub fractional: bool,
    /// Doppler truncation half-width for fractional channels.
    pub trunc: usize,

    pub generators: Vec<u32>,
    pub constraint_length: usize,
    pub terminated: bool,

    pub mode: Mode,
    /// Receiver chain of the oracle modes.
    pub oracle_link: LinkKind,
    pub oracle_xi: OracleXi,
    pub n_outer: usize,
    /// Defaults to the path count.
    pub j_max: Option<usize>,
    pub max_cycles: usize,
    pub eps_g: f64,
    pub eps_f: f64,
    pub eps_a: f64,
    /// Defaults to a quarter of the path count.
    pub eps_d: Option<f64>,
    /// Defaults to the path count, three times that for uncoded fractional runs.
    pub zeta: Option<usize>,
    pub llr_clip: f64,
    pub sigma_floor: f64,
    pub variance_floor: f64,
    pub pilot_column: usize,

    pub ebn0_db: Vec<f64>,
    pub min_errors: u64,
    pub max_frames: u64,
    pub master_seed: u64,

    /// Channel realizations for the residual, xi-variance and sparsity runs.
    pub realizations: usize,
    /// Residual runs use an unrestarted solver.
    pub full_gmres: bool,
    pub xivar_paths: Vec<usize>,
    /// Adds a wall-clock column to BER output.
    pub timing: bool,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            m: 64,
            n: 32,
            cp_len: 16,
            paths: 4,
            l_max: 10,
            k_max: 6,
            fractional: false,
            trunc: 10,
            generators: vec![0o5, 0o7],
            constraint_length: 3,
            terminated: true,
            mode: Mode::Turbo,
            oracle_link: LinkKind::Turbo,
            oracle_xi: OracleXi::PerSymbol,
            n_outer: 5,
            j_max: None,
            max_cycles: 8,
            eps_g: 1e-3,
            eps_f: 1e-3,
            eps_a: 1e-3,
            eps_d: None,
            zeta: None,
            llr_clip: DEFAULT_LLR_CLIP,
            sigma_floor: 1e-12,
            variance_floor: 1e-8,
            pilot_column: 0,
            ebn0_db: vec![0.0, 2.0, 4.0, 6.0, 8.0, 10.0],
            min_errors: 200,
            max_frames: 5000,
            master_seed: 1,
            realizations: 100,
            full_gmres: true,
            xivar_paths: vec![4, 8, 16],
            timing: false,
        }
    }
}

impl SimConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, HarnessError> {
        let cfg: Self = toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |s: String| Err(HarnessError::Config(s));
        if self.ebn0_db.is_empty() || self.ebn0_db.iter().any(|x| !x.is_finite()) {
            return bad("ebn0_db must be a nonempty list of finite values".into());
        }
        if self.min_errors == 0 || self.max_frames == 0 {
            return bad("min_errors and max_frames must be at least 1".into());
        }
        if self.realizations == 0 {
            return bad("realizations must be at least 1".into());
        }
        if self.mode == Mode::LmmseOracle && self.n_outer != 1 {
            return bad("lmmse-oracle runs a single outer iteration; set n_outer = 1".into());
        }
        if self.pilot_column >= self.m * self.n {
            return bad("pilot_column must index a grid point".into());
        }
        if self.xivar_paths.contains(&0) {
            return bad("xivar_paths entries must be positive".into());
        }
        self.grid()?;
        self.channel_stats(self.paths).validate(&self.grid()?)?;
        self.code().validate()?;
        self.equalizer().validate()?;
        if self.is_coded() {
            self.code().info_len_for(2 * self.m * self.n)?;
        }
        Ok(())
    }

    pub fn grid(&self) -> Result<OtfsGrid, HarnessError> {
        Ok(OtfsGrid::new(self.m, self.n, self.cp_len)?)
    }

    pub fn channel_stats(&self, paths: usize) -> ChannelStatistics {
        ChannelStatistics::uniform(paths, self.l_max, self.k_max, self.fractional)
    }

    pub fn code(&self) -> CodeConfig {
        CodeConfig {
            generators: self.generators.clone(),
            constraint_length: self.constraint_length,
            terminated: self.terminated,
            llr_clip: self.llr_clip,
        }
    }

    pub fn link(&self) -> LinkKind {
        match self.mode {
            Mode::Turbo => LinkKind::Turbo,
            Mode::Uncoded => LinkKind::Uncoded,
            Mode::LmmseOracle | Mode::ImmseOracle => self.oracle_link,
        }
    }

    pub fn is_coded(&self) -> bool {
        self.link() == LinkKind::Turbo
    }

    /// Information bits per transmitted bit.
    pub fn rate(&self) -> f64 {
        if self.is_coded() {
            self.code().rate()
        } else {
            1.0
        }
    }

    pub fn xi_rule(&self) -> XiRule {
        match self.oracle_xi {
            OracleXi::PerSymbol => XiRule::PerSymbol,
            OracleXi::Shared => XiRule::SharedColumn(self.pilot_column),
        }
    }

    /// Equalizer settings for `link` with this configuration's path count.
    pub fn equalizer_for(&self, link: LinkKind) -> EqualizerConfig {
        let p = self.paths;
        let default_zeta = if self.fractional && link == LinkKind::Uncoded {
            3 * p
        } else {
            p
        };
        EqualizerConfig {
            n_outer: self.n_outer,
            j_max: self.j_max.unwrap_or(p),
            max_cycles: self.max_cycles,
            eps_g: self.eps_g,
            eps_f: self.eps_f,
            eps_a: self.eps_a,
            eps_d: self.eps_d.unwrap_or(p as f64 / 4.0),
            zeta: self.zeta.unwrap_or(default_zeta),
            llr_clip: self.llr_clip,
            sigma_floor: self.sigma_floor,
            variance_floor: self.variance_floor,
            pilot_column: self.pilot_column,
        }
    }

    pub fn equalizer(&self) -> EqualizerConfig {
        self.equalizer_for(self.link())
    }

    /// SHA-256 of the canonical JSON form, as lowercase hex.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        Sha256::digest(&json)
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }
}
