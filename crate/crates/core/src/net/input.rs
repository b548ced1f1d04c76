use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pool::{augment, extract_features, jitter_feature, AugConfig, Payload, Sample, DOWNSAMPLE_H, DOWNSAMPLE_W};

/// Turns sample payloads into network inputs.
///
/// Grids are (optionally) augmented and then passed through
/// [`extract_features`]; feature payloads are (optionally) jittered.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InputPipeline {
    pub aug: AugConfig,
    pub hist_bins: usize,
}

impl Default for InputPipeline {
    fn default() -> Self {
        Self {
            aug: AugConfig::default(),
            hist_bins: 4,
        }
    }
}

impl InputPipeline {
    /// Network input width produced for a grid with `channels` channels.
    pub fn grid_feature_dim(&self, channels: usize) -> usize {
        channels * (DOWNSAMPLE_H * DOWNSAMPLE_W + self.hist_bins)
    }

    /// Input width for `sample`'s payload.
    pub fn input_dim(&self, sample: &Sample) -> usize {
        match &sample.payload {
            Payload::Feature(f) => f.len(),
            Payload::Grid(g) => self.grid_feature_dim(g.channels()),
        }
    }

    /// Deterministic encoding used for inference.
    pub fn encode(&self, sample: &Sample) -> Result<Vec<f64>> {
        match &sample.payload {
            Payload::Feature(f) => Ok(f.clone()),
            Payload::Grid(g) => extract_features(g, self.hist_bins),
        }
        .map_err(|e| e.context(format!("sample `{}`", sample.sample_id)))
    }

    /// Randomly augmented encoding used for training.
    pub fn encode_augmented<R: Rng + ?Sized>(&self, sample: &Sample, rng: &mut R) -> Result<Vec<f64>> {
        match &sample.payload {
            Payload::Feature(f) => jitter_feature(f, self.aug.feature_jitter_sigma, rng),
            Payload::Grid(g) => extract_features(&augment(g, &self.aug, rng), self.hist_bins),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.aug.validate()?;
        if self.hist_bins < 2 {
            return Err(Error::InvalidArgument(format!(
                "hist_bins must be >= 2, got {}",
                self.hist_bins
            )));
        }
        Ok(())
    }
}
