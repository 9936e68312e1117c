//! Pipeline configuration, loadable from JSON, and the hash that ties checkpoints to it.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::augment::AugmentConfig;
use crate::error::{Error, Result};
use crate::frontend::{PcenParams, Scaling};
use crate::protonet::TrainConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub scaling: Scaling,
    pub pcen: PcenParams,
    pub augment: AugmentConfig,
    /// Whether training materialises augmented copies of every recording.
    pub use_augmentation: bool,
    /// Training segment width, in frames.
    pub segment_width: usize,
    pub train: TrainConfig,
    /// Probability threshold for a positive frame.
    pub threshold: f64,
    pub median_window: usize,
    pub inference_iterations: usize,
    pub min_iou: f64,
    pub seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            scaling: Scaling::Pcen,
            pcen: PcenParams::default(),
            augment: AugmentConfig::default(),
            use_augmentation: false,
            segment_width: 17,
            train: TrainConfig::default(),
            threshold: 0.5,
            median_window: 5,
            inference_iterations: 5,
            min_iou: 0.3,
            seed: 0,
        }
    }
}

/// The fields a trained encoder depends on: changing any of them invalidates a checkpoint.
#[derive(Serialize)]
struct ModelIdentity<'a> {
    sample_rate: u32,
    n_fft: usize,
    hop: usize,
    n_mels: usize,
    scaling: Scaling,
    pcen: Option<&'a PcenParams>,
    segment_width: usize,
}

impl PipelineConfig {
    pub fn from_json(text: &str) -> Result<PipelineConfig> {
        let cfg: PipelineConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &std::path::Path) -> Result<PipelineConfig> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serialises")
    }

    pub fn validate(&self) -> Result<()> {
        self.pcen.validate()?;
        self.augment.validate()?;
        if !(0.0..=1.0).contains(&self.threshold) {
            return Err(Error::Config(format!("threshold {} outside [0, 1]", self.threshold)));
        }
        if self.median_window.is_multiple_of(2) {
            return Err(Error::Config("median window must be odd".into()));
        }
        if self.segment_width < 8 {
            return Err(Error::Config("segment width must be at least 8 frames".into()));
        }
        if self.inference_iterations == 0 {
            return Err(Error::Config("inference needs at least one iteration".into()));
        }
        let t = &self.train;
        if t.n_way < 2 || t.n_shot == 0 || t.n_query == 0 {
            return Err(Error::Config("episodes need two classes and at least one shot and query".into()));
        }
        if t.learning_rate.is_nan() || t.learning_rate <= 0.0 || !(0.0..1.0).contains(&t.momentum) {
            return Err(Error::Config("learning rate must be positive and momentum in [0, 1)".into()));
        }
        Ok(())
    }

    fn identity(&self, segment_width: usize) -> String {
        let id = ModelIdentity {
            sample_rate: crate::SAMPLE_RATE,
            n_fft: crate::N_FFT,
            hop: crate::HOP,
            n_mels: crate::N_MELS,
            scaling: self.scaling,
            pcen: (self.scaling == Scaling::Pcen).then_some(&self.pcen),
            segment_width,
        };
        let bytes = serde_json::to_vec(&id).expect("identity serialises");
        hex::encode(Sha256::digest(bytes))
    }

    /// Hex SHA-256 of the feature and model-shape settings.
    pub fn model_hash(&self) -> String {
        self.identity(self.segment_width)
    }

    /// Hash of the settings a feature cache depends on.
    pub fn feature_hash(&self) -> String {
        self.identity(0)
    }
}
