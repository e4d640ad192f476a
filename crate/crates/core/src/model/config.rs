use crate::error::{config_err, Result};
use crate::nn::{AttentionSpec, BlockKind};
use crate::tensor::conv_output_size;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    CnnOnly,
    TransformerOnly,
    Fusion,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::CnnOnly, Variant::TransformerOnly, Variant::Fusion];

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::CnnOnly => "cnn_only",
            Variant::TransformerOnly => "transformer_only",
            Variant::Fusion => "fusion",
        }
    }

    /// Row label used in comparison tables.
    pub fn display_name(self) -> &'static str {
        match self {
            Variant::CnnOnly => "CNN Only",
            Variant::TransformerOnly => "Transformer Only",
            Variant::Fusion => "Fusion Model",
        }
    }

    pub fn uses_cnn(self) -> bool {
        self != Variant::TransformerOnly
    }

    pub fn uses_transformer(self) -> bool {
        self != Variant::CnnOnly
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| config_err!("unknown variant {s:?} (expected cnn_only, transformer_only or fusion)"))
    }
}

/// Residual backbone: a stem conv followed by stages of residual blocks.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CnnConfig {
    pub stem_channels: usize,
    pub stem_kernel: usize,
    pub stem_stride: usize,
    pub stage_depths: Vec<usize>,
    pub stage_widths: Vec<usize>,
    /// Stride of the first block of each stage.
    pub stage_strides: Vec<usize>,
    pub block: BlockKind,
    pub bottleneck_ratio: usize,
}

impl Default for CnnConfig {
    fn default() -> Self {
        CnnConfig {
            stem_channels: 16,
            stem_kernel: 7,
            stem_stride: 2,
            stage_depths: vec![2, 2, 2],
            stage_widths: vec![16, 32, 64],
            stage_strides: vec![2, 2, 2],
            block: BlockKind::Bottleneck,
            bottleneck_ratio: 4,
        }
    }
}

impl CnnConfig {
    pub fn out_channels(&self) -> usize {
        *self.stage_widths.last().unwrap_or(&self.stem_channels)
    }

    pub fn stem_padding(&self) -> usize {
        self.stem_kernel / 2
    }

    /// Side length of the final feature map for a square `image_size` input.
    pub fn feature_size(&self, image_size: usize) -> Option<usize> {
        let mut s = conv_output_size(image_size, self.stem_kernel, self.stem_stride, self.stem_padding())?;
        for &stride in &self.stage_strides {
            // Every first block opens with a stride-`stride` conv (3×3 pad 1 or 1×1 pad 0),
            // both of which give the same output size.
            s = conv_output_size(s, 1, stride, 0)?;
        }
        Some(s)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub variant: Variant,
    pub image_size: usize,
    pub in_channels: usize,
    pub cnn: CnnConfig,
    /// Patch side for the transformer-only variant (raw image tokens).
    pub patch_size: usize,
    pub attention: AttentionSpec,
    pub num_classes: usize,
    /// Hidden width of the classifier head; 0 means a single linear layer.
    pub head_hidden: usize,
    /// Dropout applied to the pooled feature vector before the head.
    pub dropout_p: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            variant: Variant::Fusion,
            image_size: 224,
            in_channels: 3,
            cnn: CnnConfig::default(),
            patch_size: 16,
            attention: AttentionSpec::default(),
            num_classes: 4,
            head_hidden: 0,
            dropout_p: 0.5,
        }
    }
}

impl ModelConfig {
    /// Small configuration for 32×32 inputs: two residual blocks, one encoder layer, d = 16.
    pub fn tiny(variant: Variant, num_classes: usize) -> Self {
        ModelConfig {
            variant,
            image_size: 32,
            in_channels: 3,
            cnn: CnnConfig {
                stem_channels: 8,
                stem_kernel: 3,
                stem_stride: 2,
                stage_depths: vec![1, 1],
                stage_widths: vec![8, 16],
                stage_strides: vec![1, 2],
                block: BlockKind::Basic,
                bottleneck_ratio: 4,
            },
            patch_size: 8,
            attention: AttentionSpec { embed_dim: 16, num_heads: 2, mlp_ratio: 2, num_layers: 1, dropout_p: 0.1 },
            num_classes,
            head_hidden: 0,
            dropout_p: 0.5,
        }
    }

    /// Full-depth bottleneck backbone (3, 4, 6, 3 blocks). Too slow for CPU training but
    /// useful to check shapes.
    pub fn resnet50_like(variant: Variant, num_classes: usize) -> Self {
        ModelConfig {
            variant,
            cnn: CnnConfig {
                stem_channels: 64,
                stem_kernel: 7,
                stem_stride: 2,
                stage_depths: vec![3, 4, 6, 3],
                stage_widths: vec![256, 512, 1024, 2048],
                stage_strides: vec![2, 2, 2, 2],
                block: BlockKind::Bottleneck,
                bottleneck_ratio: 4,
            },
            attention: AttentionSpec { embed_dim: 768, num_heads: 12, mlp_ratio: 4, num_layers: 12, dropout_p: 0.1 },
            num_classes,
            ..ModelConfig::default()
        }
    }

    pub fn preset(name: &str, variant: Variant, num_classes: usize) -> Result<Self> {
        match name {
            "default" => Ok(ModelConfig { variant, num_classes, ..ModelConfig::default() }),
            "tiny" => Ok(ModelConfig::tiny(variant, num_classes)),
            "resnet50" => Ok(ModelConfig::resnet50_like(variant, num_classes)),
            _ => Err(config_err!("unknown model preset {name:?} (expected default, tiny or resnet50)")),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 2 {
            return Err(config_err!("num_classes must be at least 2, got {}", self.num_classes));
        }
        if self.image_size == 0 || self.in_channels == 0 {
            return Err(config_err!("image_size and in_channels must be positive"));
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return Err(config_err!("dropout_p {} outside [0, 1)", self.dropout_p));
        }
        if self.variant.uses_transformer() {
            self.attention.validate()?;
            if self.attention.num_layers == 0 {
                return Err(config_err!("attention.num_layers must be at least 1"));
            }
        }
        if self.variant == Variant::TransformerOnly && (self.patch_size == 0 || self.image_size % self.patch_size != 0) {
            return Err(config_err!(
                "image_size {} is not divisible by patch_size {}",
                self.image_size,
                self.patch_size
            ));
        }
        if self.variant.uses_cnn() {
            let c = &self.cnn;
            if c.stage_depths.is_empty()
                || c.stage_depths.len() != c.stage_widths.len()
                || c.stage_depths.len() != c.stage_strides.len()
            {
                return Err(config_err!(
                    "cnn stage_depths, stage_widths and stage_strides must be non-empty and equally long"
                ));
            }
            let positive = |v: &[usize]| v.iter().all(|&x| x > 0);
            if !positive(&c.stage_depths) || !positive(&c.stage_widths) || !positive(&c.stage_strides) {
                return Err(config_err!("cnn stage values must be positive"));
            }
            if c.stem_channels == 0 || c.stem_kernel == 0 || c.stem_stride == 0 || c.bottleneck_ratio == 0 {
                return Err(config_err!("cnn stem and bottleneck values must be positive"));
            }
            if c.feature_size(self.image_size).is_none() {
                return Err(config_err!("image_size {} is too small for the cnn stem", self.image_size));
            }
        }
        Ok(())
    }

    /// Width of the pooled CNN features.
    pub fn local_dim(&self) -> usize {
        if self.variant.uses_cnn() {
            self.cnn.out_channels()
        } else {
            0
        }
    }

    /// Width of the pooled transformer features.
    pub fn global_dim(&self) -> usize {
        if self.variant.uses_transformer() {
            self.attention.embed_dim
        } else {
            0
        }
    }

    /// Width of the vector the head consumes.
    pub fn feature_dim(&self) -> usize {
        self.local_dim() + self.global_dim()
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("model config serializes")
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ModelConfig = toml::from_str(text).map_err(|e| config_err!("model config: {e}"))?;
        cfg.validate()?;
        Ok(cfg)
    }
}
