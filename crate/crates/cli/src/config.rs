//! Run configuration file: one JSON document binding the corpus, model,
//! federation, encryption and evaluation parameters.
//!
//! Unknown keys are rejected at every level; absent keys take defaults.
//! The fully resolved configuration is echoed into each command's manifest.

use std::path::Path;

use serde::{Deserialize, Serialize};

use fedembed_core::corpus::CorpusSpec;
use fedembed_core::error::{Error, Result};
use fedembed_core::fed::FedConfig;
use fedembed_core::he::HeParams;
use fedembed_core::io;
use fedembed_core::retrieval::{AccMode, EvalOptions};

/// Encoder shape and featurizer parameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub d_in: usize,
    pub d_out: usize,
    pub hash_seed: u64,
    pub init_scale: f64,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            d_in: 256,
            d_out: 64,
            hash_seed: 42,
            init_scale: 0.05,
        }
    }
}

/// Encryption parameters plus the randomness mode.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HeSection {
    pub modulus_bits: usize,
    pub frac_bits: u32,
    pub max_clients: usize,
    pub max_abs_value: f64,
    pub max_weight: u64,
    /// When true, encryption randomness derives from the run seed
    /// (reproducible ciphertexts); when false it comes from OS entropy.
    pub seeded_encryption: bool,
}

impl Default for HeSection {
    fn default() -> Self {
        let p = HeParams::default();
        Self {
            modulus_bits: p.modulus_bits,
            frac_bits: p.frac_bits,
            max_clients: p.max_clients,
            max_abs_value: p.max_abs_value,
            max_weight: p.max_weight,
            seeded_encryption: false,
        }
    }
}

impl HeSection {
    pub fn params(&self) -> HeParams {
        HeParams {
            modulus_bits: self.modulus_bits,
            frac_bits: self.frac_bits,
            max_clients: self.max_clients,
            max_abs_value: self.max_abs_value,
            max_weight: self.max_weight,
        }
    }
}

/// Retrieval evaluation knobs.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    pub ks: Vec<usize>,
    pub acc_theta: f64,
    /// "threshold" or "label".
    pub acc_mode: String,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            ks: vec![1, 5, 10],
            acc_theta: 0.5,
            acc_mode: "threshold".into(),
        }
    }
}

impl EvalSection {
    pub fn options(&self) -> Result<EvalOptions> {
        let acc_mode = match self.acc_mode.as_str() {
            "threshold" => AccMode::Threshold,
            "label" => AccMode::Label,
            other => {
                return Err(Error::Config(format!(
                    "acc_mode must be 'threshold' or 'label', got '{other}'"
                )))
            }
        };
        if !(-1.0..=1.0).contains(&self.acc_theta) {
            return Err(Error::Config(format!(
                "acc_theta must lie in [-1, 1], got {}",
                self.acc_theta
            )));
        }
        Ok(EvalOptions {
            ks: self.ks.clone(),
            theta: self.acc_theta,
            acc_mode,
        })
    }
}

/// The whole config file.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub corpus: CorpusSpec,
    pub model: ModelSection,
    pub fed: FedConfig,
    pub he: HeSection,
    pub eval: EvalSection,
}

impl RunConfig {
    /// Loads from a path, or returns defaults when no path is given.
    pub fn load(path: Option<&Path>) -> Result<Self> {
        match path {
            None => Ok(Self::default()),
            Some(p) => {
                let text = io::read_text(p)?;
                serde_json::from_str(&text).map_err(|e| {
                    Error::Config(format!("{}: {e}", p.display()))
                })
            }
        }
    }
}
