use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spectral::{FrequencyIndexSet, FrequencySource, DEFAULT_BASE_GRID};

/// Architecture hyper-parameters.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Channel widths of the four encoder stages (strides 4, 8, 16, 32).
    pub widths: [usize; 4],
    /// Number of frequency components per gate.
    pub freq_components: usize,
    /// Base grid on which frequency indices are defined.
    pub base_grid: [usize; 2],
    /// Channel width after the decoder's fusion convolution.
    pub decoder_width: usize,
    /// One encoder for both dates (Siamese) or one per date.
    pub share_encoder_weights: bool,
    /// Optional index file overriding the default frequency order.
    pub freq_file: Option<PathBuf>,
}

impl Default for ModelConfig {
    /// ResNet-18-scale widths with 16 frequency components.
    fn default() -> Self {
        Self {
            widths: [64, 128, 256, 512],
            freq_components: 16,
            base_grid: [DEFAULT_BASE_GRID, DEFAULT_BASE_GRID],
            decoder_width: 256,
            share_encoder_weights: true,
            freq_file: None,
        }
    }
}

impl ModelConfig {
    /// Small configuration for CPU experiments and tests.
    pub fn desk() -> Self {
        Self {
            widths: [16, 32, 64, 128],
            freq_components: 4,
            decoder_width: 64,
            ..Self::default()
        }
    }

    pub fn with_components(mut self, n: usize) -> Self {
        self.freq_components = n;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.widths.contains(&0) || self.decoder_width == 0 {
            return Err(Error::Config("channel widths must be positive".into()));
        }
        if self.freq_components == 0 {
            return Err(Error::Config("freq_components must be at least 1".into()));
        }
        for &w in &self.widths {
            if w % self.freq_components != 0 {
                return Err(Error::Config(format!(
                    "stage width {w} is not divisible by {} frequency components",
                    self.freq_components
                )));
            }
        }
        if self.base_grid.contains(&0) {
            return Err(Error::Config("base grid must be non-empty".into()));
        }
        Ok(())
    }

    pub fn frequency_source(&self) -> FrequencySource {
        match &self.freq_file {
            Some(p) => FrequencySource::File(p.clone()),
            None => FrequencySource::DefaultOrder,
        }
    }

    pub fn frequency_indices(&self) -> Result<FrequencyIndexSet> {
        crate::spectral::select_frequencies(
            self.freq_components,
            &self.frequency_source(),
            self.base_grid[0],
            self.base_grid[1],
        )
    }
}
