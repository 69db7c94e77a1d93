//! Run configuration shared by training, inference and evaluation.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::attention::QueryConfig;
use crate::autodiff::checkpoint::sha256_hex;
use crate::autodiff::{AdamConfig, LrSchedule};
use crate::corpus::SynthConfig;
use crate::error::{Error, Result};
use crate::transducer::AsrConfig;
use crate::visual::{Conv3dLayer, FrontendConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum System {
    AudioOnly,
    AvSingle,
    Ss,
    TwoStep,
    E2e,
}

impl System {
    pub const ALL: [System; 5] = [System::AudioOnly, System::AvSingle, System::Ss, System::TwoStep, System::E2e];

    pub fn as_str(self) -> &'static str {
        match self {
            System::AudioOnly => "audio-only",
            System::AvSingle => "av-single",
            System::Ss => "ss",
            System::TwoStep => "two-step",
            System::E2e => "e2e",
        }
    }
}

impl fmt::Display for System {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for System {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        System::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown system {s:?}")))
    }
}

/// Architecture of every module; each system uses the parts it needs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub frontend: FrontendConfig,
    pub query: QueryConfig,
    pub asr: AsrConfig,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            frontend: FrontendConfig::default(),
            query: QueryConfig::default(),
            asr: AsrConfig::default(),
        }
    }
}

impl ModelConfig {
    /// 8x8 faces through three conv layers, 32-d visual and query features.
    /// Every system trains in minutes on one CPU core at this size.
    pub fn compact() -> Self {
        let layer = |c, s| Conv3dLayer {
            out_channels: c,
            kernel: [3, 3, 3],
            stride: [s, s],
        };
        let frontend = FrontendConfig {
            height: 8,
            width: 8,
            layers: vec![layer(8, 1), layer(16, 2), layer(16, 1)],
            feature_dim: 32,
            ..FrontendConfig::default()
        };
        let query = QueryConfig {
            hidden: 32,
            dim: 32,
            ..QueryConfig::default()
        };
        let asr = AsrConfig {
            visual_dim: 32,
            ..AsrConfig::default()
        };
        Self { frontend, query, asr }
    }

    pub fn validate(&self) -> Result<()> {
        self.frontend.spatial_plan()?;
        if self.asr.visual_dim != self.frontend.output_dim() {
            return Err(Error::Config(format!(
                "asr.visual_dim ({}) must equal the frontend output width ({})",
                self.asr.visual_dim,
                self.frontend.output_dim()
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub steps: u64,
    /// Utterances per step; also the number of competing tracks (B = M).
    pub batch: usize,
    pub schedule: LrSchedule,
    pub adam: AdamConfig,
    /// Probability of mixing babble into a training utterance.
    pub noise_prob: f64,
    /// SNR range for training babble, dB.
    pub snr_db: (f64, f64),
    pub log_every: u64,
    /// Write an intermediate checkpoint every this many steps (0: only at
    /// the end).
    pub save_every: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 10_000,
            batch: 4,
            schedule: LrSchedule::default(),
            adam: AdamConfig::default(),
            noise_prob: 0.5,
            snr_db: (0.0, 20.0),
            log_every: 100,
            save_every: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.schedule.validate()?;
        if self.steps == 0 || self.batch < 2 {
            return Err(Error::Config("training needs steps >= 1 and batch >= 2".into()));
        }
        if !(0.0..=1.0).contains(&self.noise_prob) || self.snr_db.0 > self.snr_db.1 {
            return Err(Error::Config("noise_prob must be in [0, 1] and snr_db ordered".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DataConfig {
    pub train_manifest: Option<PathBuf>,
    pub eval_manifest: Option<PathBuf>,
}

/// Everything that determines a run. Its digest is stamped into checkpoints
/// and reports.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub system: System,
    pub seed: u64,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub synth: SynthConfig,
    #[serde(default)]
    pub data: DataConfig,
    /// Donor checkpoint for the e2e visual frontend.
    #[serde(default)]
    pub warm_start: Option<PathBuf>,
}

impl RunConfig {
    pub fn new(system: System, seed: u64) -> Self {
        Self {
            system,
            seed,
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            synth: SynthConfig::default(),
            data: DataConfig::default(),
            warm_start: None,
        }
    }

    /// [`ModelConfig::compact`] with matching 8x8 corpus frames.
    pub fn compact(system: System, seed: u64) -> Self {
        Self {
            model: ModelConfig::compact(),
            synth: SynthConfig {
                height: 8,
                width: 8,
                ..SynthConfig::default()
            },
            ..Self::new(system, seed)
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()?;
        self.synth.validate()?;
        if (self.model.frontend.height, self.model.frontend.width) != (self.synth.height, self.synth.width) {
            return Err(Error::Config(format!(
                "frontend input {}x{} does not match corpus frames {}x{}",
                self.model.frontend.height, self.model.frontend.width, self.synth.height, self.synth.width
            )));
        }
        Ok(())
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("config serializes")
    }

    /// SHA-256 of the canonical JSON form.
    pub fn digest(&self) -> String {
        sha256_hex(self.to_json().as_bytes())
    }
}
