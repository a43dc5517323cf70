use std::path::Path;

use imm_core::experiments::logreg::LogRegSweep;
use imm_core::experiments::quality::QualityConfig;
use imm_core::experiments::rl::RlConfig;
use imm_core::experiments::serialized::SerializedConfig;
use imm_core::experiments::toylm::LmConfig;
use serde::{Deserialize, Serialize};

use crate::Experiment;

pub const SEED_ENV: &str = "IMM_SEED";

/// Every experiment section; absent sections and fields take their defaults.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub logreg: LogRegSweep,
    pub lm: LmConfig,
    pub rl: RlConfig,
    pub quality: QualityConfig,
    pub serialized: SerializedConfig,
}

/// JSON sidecar written next to each results file. Passing it back through
/// `--config` reproduces the run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunManifest {
    pub experiment: String,
    pub version: String,
    pub seed: u64,
    pub config: FileConfig,
    pub started_unix: u64,
    pub finished_unix: u64,
    pub outputs: Vec<String>,
}

#[derive(Debug, Default, Clone)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub n: Option<usize>,
    pub lambda: Option<f64>,
    pub runs: Option<usize>,
    pub epochs: Option<usize>,
}

/// `.json` files are read as run manifests, anything else as TOML.
pub fn load(path: &Path) -> Result<FileConfig, String> {
    let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    if path.extension().is_some_and(|e| e == "json") {
        let m: RunManifest = serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))?;
        Ok(m.config)
    } else {
        toml::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))
    }
}

/// The `--seed` flag wins over the environment, which wins over the file.
pub fn resolve_seed(flag: Option<u64>) -> Result<Option<u64>, String> {
    if flag.is_some() {
        return Ok(flag);
    }
    match std::env::var(SEED_ENV) {
        Ok(v) => v.trim().parse().map(Some).map_err(|_| format!("{SEED_ENV}={v:?} is not an unsigned integer")),
        Err(_) => Ok(None),
    }
}

impl FileConfig {
    pub fn apply(&mut self, o: &Overrides) {
        if let Some(s) = o.seed {
            self.logreg.seed = s;
            self.lm.seed = s;
            self.rl.seed = s;
            self.quality.seed = s;
            self.serialized.seed = s;
        }
        if let Some(n) = o.n {
            self.logreg.sizes = vec![n];
            self.quality.logreg_sizes = vec![n];
            self.serialized.sizes = vec![n];
        }
        if let Some(l) = o.lambda {
            self.logreg.lambda = Some(l);
            self.lm.lambda = l;
            self.rl.lambda = l;
            self.serialized.lambda = l;
        }
        if let Some(r) = o.runs {
            self.logreg.runs = r;
            self.lm.runs = r;
            self.rl.runs = r;
            self.quality.logreg_runs = r;
            self.quality.rl_runs = r;
            self.serialized.runs = r;
        }
        if let Some(e) = o.epochs {
            self.logreg.epochs = e;
            self.lm.epochs = e;
            self.rl.epochs = vec![e];
        }
    }

    pub fn seed(&self, exp: Experiment) -> u64 {
        match exp {
            Experiment::Logreg => self.logreg.seed,
            Experiment::Lm => self.lm.seed,
            Experiment::Rl => self.rl.seed,
            Experiment::Quality => self.quality.seed,
            Experiment::Serialized => self.serialized.seed,
        }
    }

    /// Only the sections an experiment reads go into its output hash.
    pub fn hashed(&self, exp: Experiment) -> serde_json::Value {
        match exp {
            Experiment::Logreg => serde_json::json!({ "logreg": self.logreg }),
            Experiment::Lm => serde_json::json!({ "lm": self.lm }),
            Experiment::Rl => serde_json::json!({ "rl": self.rl }),
            Experiment::Quality => serde_json::json!({ "quality": self.quality, "logreg": self.logreg, "rl": self.rl }),
            Experiment::Serialized => serde_json::json!({ "serialized": self.serialized, "logreg": self.logreg }),
        }
    }

    pub fn validate(&self, exp: Experiment) -> Result<(), String> {
        let r = match exp {
            Experiment::Logreg => self.logreg.validate(),
            Experiment::Lm => self.lm.validate(),
            Experiment::Rl => self.rl.validate(),
            Experiment::Quality => self.quality.validate().and(self.logreg.validate()).and(self.rl.validate()),
            Experiment::Serialized => self.serialized.validate().and(self.logreg.base().validate()),
        };
        r.map_err(|e| e.to_string())
    }
}
