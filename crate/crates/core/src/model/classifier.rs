use super::config::{ModelConfig, Variant};
use crate::autodiff::Var;
use crate::error::{config_err, dim_err, Result};
use crate::nn::{
    BatchNorm2d, Conv2d, Graph, LayerParams, Linear, Mode, PatchEmbed, ResidualBlock, ResidualBlockSpec,
    TransformerBlock,
};
use crate::rng::Rng;
use crate::tensor::{Scalar, Tensor};

/// Pooled features feeding the fusion head.
#[derive(Clone, Copy, Debug)]
pub struct FeatureBundle {
    /// `[N, d_local]`, global average pool of the CNN feature map.
    pub local: Var,
    /// `[N, d_global]`, mean of the transformer output tokens.
    pub global: Var,
}

#[derive(Clone, Debug)]
struct Backbone {
    stem: Conv2d,
    stem_bn: BatchNorm2d,
    blocks: Vec<ResidualBlock>,
}

#[derive(Clone, Debug)]
struct Encoder {
    embed: PatchEmbed,
    blocks: Vec<TransformerBlock>,
}

/// One of the three classifier variants, built from a [`ModelConfig`].
///
/// The struct only describes the layers; parameters live in a separate
/// [`LayerParams`] set so the same model can run in `f32` for training and in `f64`
/// for gradient checks.
#[derive(Clone, Debug)]
pub struct Classifier {
    config: ModelConfig,
    cnn: Option<Backbone>,
    encoder: Option<Encoder>,
    head: Vec<Linear>,
}

impl Classifier {
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let cnn = config.variant.uses_cnn().then(|| build_backbone(&config));
        let encoder = match config.variant {
            Variant::CnnOnly => None,
            Variant::TransformerOnly => Some(build_encoder(
                &config,
                config.in_channels,
                config.patch_size,
                config.image_size,
            )?),
            Variant::Fusion => {
                let side = config.cnn.feature_size(config.image_size).expect("validated");
                Some(build_encoder(&config, config.cnn.out_channels(), 1, side)?)
            }
        };
        let f = config.feature_dim();
        let head = if config.head_hidden == 0 {
            vec![Linear::new("head.fc", f, config.num_classes)]
        } else {
            vec![
                Linear::new("head.fc1", f, config.head_hidden),
                Linear::new("head.fc2", config.head_hidden, config.num_classes),
            ]
        };
        Ok(Classifier { config, cnn, encoder, head })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn variant(&self) -> Variant {
        self.config.variant
    }

    pub fn num_classes(&self) -> usize {
        self.config.num_classes
    }

    /// The final linear layer producing the logits.
    pub fn output_layer(&self) -> &Linear {
        self.head.last().expect("head has at least one layer")
    }

    /// The head layer that consumes the pooled feature vector.
    pub fn input_layer(&self) -> &Linear {
        &self.head[0]
    }

    /// Number of tokens seen by the transformer, if any.
    pub fn num_tokens(&self) -> Option<usize> {
        self.encoder.as_ref().map(|e| e.embed.num_tokens())
    }

    /// Fresh parameters. Each component draws from its own substream so changing one
    /// part of the architecture leaves the others' initial values unchanged.
    pub fn init_params<S: Scalar>(&self, seed: u64) -> Result<LayerParams<S>> {
        let root = Rng::new(seed);
        let mut params = LayerParams::new();
        if let Some(cnn) = &self.cnn {
            let mut rng = root.split(1);
            cnn.stem.init(&mut params, &mut rng)?;
            cnn.stem_bn.init(&mut params)?;
            for b in &cnn.blocks {
                b.init(&mut params, &mut rng)?;
            }
        }
        if let Some(enc) = &self.encoder {
            let mut rng = root.split(2);
            enc.embed.init(&mut params, &mut rng)?;
            for b in &enc.blocks {
                b.init(&mut params, &mut rng)?;
            }
        }
        let mut rng = root.split(3);
        for l in &self.head {
            l.init(&mut params, &mut rng)?;
        }
        Ok(params)
    }

    fn check_input<S: Scalar>(&self, g: &Graph<'_, S>, images: Var) -> Result<()> {
        let s = g.shape(images);
        let c = &self.config;
        if s.len() != 4 || s[1] != c.in_channels {
            return Err(dim_err!("model expects [N,{},{},{}] images, got {s:?}", c.in_channels, c.image_size, c.image_size));
        }
        if s[2] != c.image_size || s[3] != c.image_size {
            return Err(dim_err!(
                "model built for {}x{} images, got {}x{}",
                c.image_size,
                c.image_size,
                s[2],
                s[3]
            ));
        }
        Ok(())
    }

    fn cnn_features<S: Scalar>(&self, g: &mut Graph<'_, S>, images: Var) -> Result<Var> {
        let cnn = self.cnn.as_ref().ok_or_else(|| config_err!("{} model has no CNN backbone", self.variant()))?;
        let h = cnn.stem.forward(g, images)?;
        let h = cnn.stem_bn.forward(g, h)?;
        let mut h = g.tape_mut().relu(h);
        for b in &cnn.blocks {
            h = b.forward(g, h)?;
        }
        Ok(h)
    }

    fn encode<S: Scalar>(&self, g: &mut Graph<'_, S>, source: Var) -> Result<Var> {
        let enc = self.encoder.as_ref().ok_or_else(|| config_err!("{} model has no transformer", self.variant()))?;
        let mut t = enc.embed.forward(g, source)?;
        for b in &enc.blocks {
            t = b.forward(g, t)?;
        }
        g.tape_mut().mean_axis(t, 1)
    }

    fn head<S: Scalar>(&self, g: &mut Graph<'_, S>, features: Var) -> Result<Var> {
        let mut h = g.dropout(features, self.config.dropout_p)?;
        let last = self.head.len() - 1;
        for (i, l) in self.head.iter().enumerate() {
            h = l.forward(g, h)?;
            if i != last {
                h = g.tape_mut().relu(h);
            }
        }
        Ok(h)
    }

    /// Stem → residual stages → global average pool → head.
    pub fn forward_cnn_only<S: Scalar>(&self, g: &mut Graph<'_, S>, images: Var) -> Result<Var> {
        self.expect_variant(Variant::CnnOnly)?;
        self.check_input(g, images)?;
        let m = self.cnn_features(g, images)?;
        let local = global_avg_pool(g, m)?;
        self.head(g, local)
    }

    /// Raw-image patches → encoder blocks → token mean → head.
    pub fn forward_transformer_only<S: Scalar>(&self, g: &mut Graph<'_, S>, images: Var) -> Result<Var> {
        self.expect_variant(Variant::TransformerOnly)?;
        self.check_input(g, images)?;
        let global = self.encode(g, images)?;
        self.head(g, global)
    }

    /// CNN feature map → one token per spatial position → encoder; the pooled map and
    /// the pooled tokens are concatenated before the head.
    pub fn forward_fusion<S: Scalar>(&self, g: &mut Graph<'_, S>, images: Var) -> Result<(Var, FeatureBundle)> {
        self.expect_variant(Variant::Fusion)?;
        self.check_input(g, images)?;
        let m = self.cnn_features(g, images)?;
        let local = global_avg_pool(g, m)?;
        let global = self.encode(g, m)?;
        let fused = g.tape_mut().concat(&[local, global], 1)?;
        Ok((self.head(g, fused)?, FeatureBundle { local, global }))
    }

    /// Logits `[N, K]` for whichever variant this model is.
    pub fn forward<S: Scalar>(&self, g: &mut Graph<'_, S>, images: Var) -> Result<Var> {
        match self.variant() {
            Variant::CnnOnly => self.forward_cnn_only(g, images),
            Variant::TransformerOnly => self.forward_transformer_only(g, images),
            Variant::Fusion => Ok(self.forward_fusion(g, images)?.0),
        }
    }

    /// Eval-mode class probabilities and argmax ids (ties go to the lowest index).
    pub fn predict<S: Scalar>(&self, params: &mut LayerParams<S>, images: Tensor<S>) -> Result<Prediction> {
        let mut g = Graph::new(params, Mode::Eval, Rng::new(0));
        let x = g.input(images);
        let logits = self.forward(&mut g, x)?;
        Ok(Prediction::from_logits(g.value(logits)))
    }

    fn expect_variant(&self, v: Variant) -> Result<()> {
        if self.variant() != v {
            return Err(config_err!("model is {}, not {v}", self.variant()));
        }
        Ok(())
    }
}

/// `[N,C,H,W]` → `[N,C]`.
pub fn global_avg_pool<S: Scalar>(g: &mut Graph<'_, S>, m: Var) -> Result<Var> {
    let s = g.shape(m).to_vec();
    if s.len() != 4 {
        return Err(dim_err!("global pool expects [N,C,H,W], got {s:?}"));
    }
    let t = g.tape_mut();
    let flat = t.reshape(m, vec![s[0], s[1], s[2] * s[3]])?;
    t.mean_axis(flat, 2)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    pub class_ids: Vec<usize>,
    /// Row-major `[N, K]` probabilities.
    pub probs: Vec<Vec<f64>>,
}

impl Prediction {
    pub fn from_logits<S: Scalar>(logits: &Tensor<S>) -> Prediction {
        let k = *logits.shape().last().expect("logits have a class axis");
        let mut class_ids = Vec::new();
        let mut probs = Vec::new();
        for row in logits.to_f64_vec().chunks(k) {
            let p = softmax_row(row);
            class_ids.push(argmax(&p));
            probs.push(p);
        }
        Prediction { class_ids, probs }
    }
}

pub fn softmax_row(row: &[f64]) -> Vec<f64> {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = row.iter().map(|v| (v - max).exp()).collect();
    let z: f64 = e.iter().sum();
    e.into_iter().map(|v| v / z).collect()
}

/// Index of the largest value; the first one wins ties.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

fn build_backbone(config: &ModelConfig) -> Backbone {
    let c = &config.cnn;
    let stem = Conv2d::new("cnn.stem.conv", config.in_channels, c.stem_channels, c.stem_kernel, c.stem_stride, c.stem_padding());
    let stem_bn = BatchNorm2d::new("cnn.stem.bn", c.stem_channels);
    let mut blocks = Vec::new();
    let mut cin = c.stem_channels;
    for (si, ((&depth, &width), &stride)) in c.stage_depths.iter().zip(&c.stage_widths).zip(&c.stage_strides).enumerate() {
        for bi in 0..depth {
            let spec = ResidualBlockSpec {
                in_channels: cin,
                out_channels: width,
                stride: if bi == 0 { stride } else { 1 },
                bottleneck_ratio: c.bottleneck_ratio,
                kind: c.block,
            };
            blocks.push(ResidualBlock::new(&format!("cnn.stage{}.block{}", si + 1, bi + 1), spec));
            cin = width;
        }
    }
    Backbone { stem, stem_bn, blocks }
}

fn build_encoder(config: &ModelConfig, channels: usize, patch: usize, side: usize) -> Result<Encoder> {
    let spec = config.attention;
    let embed = PatchEmbed::new("transformer.embed", channels, patch, side, side, spec.embed_dim)?;
    let blocks = (0..spec.num_layers)
        .map(|i| TransformerBlock::new(&format!("transformer.block{}", i + 1), spec))
        .collect::<Result<_>>()?;
    Ok(Encoder { embed, blocks })
}
