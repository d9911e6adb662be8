use serde::{Deserialize, Serialize};

use super::family::registry;
use crate::error::{Error, Result};
use crate::numcore::Activation;

pub const DEFAULT_HEADS: usize = 4;
pub const DEFAULT_INPUT_DIM: usize = 78;
pub const DEFAULT_ATTENTION_WINDOW: usize = 8;
pub const DEFAULT_CONV_KERNEL: usize = 7;

/// The structural triple `(n_layer, d_model, d_ffn)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Structure {
    pub n_layer: usize,
    pub d_model: usize,
    pub d_ffn: usize,
}

impl Structure {
    pub const fn new(n_layer: usize, d_model: usize, d_ffn: usize) -> Self {
        Self {
            n_layer,
            d_model,
            d_ffn,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    /// Registered family name, e.g. `ConvTransformer`.
    pub family: String,
    pub n_layer: usize,
    pub d_model: usize,
    pub d_ffn: usize,
    #[serde(default = "default_heads")]
    pub n_heads: usize,
    pub activation: Activation,
    pub n_classes: usize,
    #[serde(default = "default_input_dim")]
    pub input_dim: usize,
    /// Local attention span (SpeechFormer); a frame sees `window / 2` frames
    /// on each side.
    #[serde(default = "default_window")]
    pub attention_window: usize,
    /// Depthwise convolution kernel (Conformer); must be odd.
    #[serde(default = "default_conv_kernel")]
    pub conv_kernel: usize,
}

fn default_heads() -> usize {
    DEFAULT_HEADS
}
fn default_input_dim() -> usize {
    DEFAULT_INPUT_DIM
}
fn default_window() -> usize {
    DEFAULT_ATTENTION_WINDOW
}
fn default_conv_kernel() -> usize {
    DEFAULT_CONV_KERNEL
}

impl ModelConfig {
    pub fn with_structure(family: &str, structure: Structure, n_classes: usize) -> Result<Self> {
        let fam = registry().get(family)?;
        Ok(Self {
            family: fam.name().to_string(),
            n_layer: structure.n_layer,
            d_model: structure.d_model,
            d_ffn: structure.d_ffn,
            n_heads: DEFAULT_HEADS,
            activation: fam.default_activation(),
            n_classes,
            input_dim: DEFAULT_INPUT_DIM,
            attention_window: DEFAULT_ATTENTION_WINDOW,
            conv_kernel: DEFAULT_CONV_KERNEL,
        })
    }

    /// The compressed on-device structure of `family`.
    pub fn lightweight(family: &str, n_classes: usize) -> Result<Self> {
        let s = registry().get(family)?.lightweight();
        Self::with_structure(family, s, n_classes)
    }

    /// The full-size structure of `family`.
    pub fn original(family: &str, n_classes: usize) -> Result<Self> {
        let s = registry().get(family)?.original();
        Self::with_structure(family, s, n_classes)
    }

    pub fn structure(&self) -> Structure {
        Structure::new(self.n_layer, self.d_model, self.d_ffn)
    }

    pub fn validate(&self) -> Result<()> {
        registry().get(&self.family)?;
        let positive = [
            ("n_layer", self.n_layer),
            ("d_model", self.d_model),
            ("d_ffn", self.d_ffn),
            ("n_heads", self.n_heads),
            ("n_classes", self.n_classes),
            ("input_dim", self.input_dim),
            ("attention_window", self.attention_window),
            ("conv_kernel", self.conv_kernel),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::invalid(format!("{name} must be >= 1")));
            }
        }
        if !self.d_model.is_multiple_of(self.n_heads) {
            return Err(Error::invalid(format!(
                "d_model {} is not divisible by n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        if self.conv_kernel.is_multiple_of(2) {
            return Err(Error::invalid(format!(
                "conv_kernel must be odd, got {}",
                self.conv_kernel
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets() {
        let c = ModelConfig::original("ConvTransformer", 4).unwrap();
        assert_eq!(c.structure(), Structure::new(8, 80, 320));
        let c = ModelConfig::original("Conformer", 4).unwrap();
        assert_eq!(c.structure(), Structure::new(4, 80, 320));
        assert_eq!(c.activation, Activation::Swish);
        let c = ModelConfig::original("SpeechFormer", 4).unwrap();
        assert_eq!(c.structure(), Structure::new(8, 80, 64));
        assert_eq!(
            ModelConfig::lightweight("ConvTransformer", 4).unwrap().structure(),
            Structure::new(1, 16, 4)
        );
        assert_eq!(
            ModelConfig::lightweight("Conformer", 4).unwrap().structure(),
            Structure::new(1, 16, 2)
        );
        let s = ModelConfig::lightweight("SpeechFormer", 4).unwrap();
        assert_eq!(s.structure(), Structure::new(1, 16, 4));
        assert_eq!(s.activation, Activation::ReLU);
        assert_eq!(s.n_heads, 4);
        assert_eq!(s.input_dim, 78);
    }

    #[test]
    fn validation() {
        let mut c = ModelConfig::lightweight("ConvTransformer", 4).unwrap();
        c.n_heads = 3;
        assert!(c.validate().is_err());
        c.n_heads = 4;
        c.conv_kernel = 4;
        assert!(c.validate().is_err());
        c.conv_kernel = 5;
        c.family = "Mamba".into();
        assert!(c.validate().is_err());
    }

    #[test]
    fn json_defaults_fill_in() {
        let c: ModelConfig = serde_json::from_str(
            r#"{"family":"Conformer","n_layer":1,"d_model":16,"d_ffn":2,"activation":"Swish","n_classes":4}"#,
        )
        .unwrap();
        assert_eq!(c.n_heads, 4);
        assert_eq!(c.input_dim, 78);
        assert!(serde_json::from_str::<ModelConfig>(r#"{"family":"Conformer","bogus":1}"#).is_err());
    }
}
