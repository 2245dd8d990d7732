//! TOML configuration file. Every key is optional; values given on the
//! command line take precedence, and anything unset falls back to the
//! built-in defaults.
//!
//! ```toml
//! seed = 7
//! split = [0.7, 0.1, 0.2]
//!
//! [synth]
//! graphs_per_class = 200
//! structure_signal = 0.4
//!
//! [train]
//! model = "better-gnn"
//! epochs = 50
//!
//! [gradcheck]
//! epsilon = 1e-5
//! tolerance = 1e-4
//!
//! [ablation]
//! rewiring = "uniform"
//! ```

use serde::Deserialize;
use std::path::Path;
use topognn::ablation::Rewiring;
use topognn::checks;
use topognn::synth::SynthConfig;
use topognn::training::TrainConfig;

pub const DEFAULT_SPLIT: [f64; 3] = [0.7, 0.1, 0.2];

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GradcheckConfig {
    pub epsilon: f64,
    pub tolerance: f64,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        GradcheckConfig { epsilon: checks::DEFAULT_EPSILON, tolerance: checks::DEFAULT_TOLERANCE }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblationConfig {
    pub rewiring: Rewiring,
    pub dataset_id: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    /// Overrides the seeds inside the sections.
    pub seed: Option<u64>,
    pub split: Option<[f64; 3]>,
    pub synth: SynthConfig,
    pub train: TrainConfig,
    pub gradcheck: GradcheckConfig,
    pub ablation: AblationConfig,
}

impl FileConfig {
    pub fn load(path: Option<&Path>) -> Result<FileConfig, String> {
        let Some(path) = path else { return Ok(FileConfig::default()) };
        let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        toml::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))
    }

    /// Seed after applying the command-line flag.
    pub fn seed(&self, flag: Option<u64>, section_seed: u64) -> u64 {
        flag.or(self.seed).unwrap_or(section_seed)
    }

    pub fn split(&self, flag: Option<[f64; 3]>) -> [f64; 3] {
        flag.or(self.split).unwrap_or(DEFAULT_SPLIT)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use topognn::model::ModelKind;

    #[test]
    fn partial_file_keeps_defaults() {
        let c: FileConfig = toml::from_str("seed = 3\n[train]\nmodel = \"gcn\"\nepochs = 5\n").unwrap();
        assert_eq!(c.train.model, ModelKind::Gcn);
        assert_eq!(c.train.epochs, 5);
        assert_eq!(c.train.learning_rate, TrainConfig::default().learning_rate);
        assert_eq!(c.synth, SynthConfig::default());
        assert_eq!(c.seed(None, 0), 3);
        assert_eq!(c.seed(Some(9), 0), 9);
        assert_eq!(FileConfig::default().seed(None, 4), 4);
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(toml::from_str::<FileConfig>("[train]\nlearnig_rate = 0.1\n").is_err());
    }
}
