//! The three classifier variants.
//!
//! All variants take `[N, 3, S, S]` images and return `[N, K]` logits:
//!
//! - `cnn_only`: residual backbone, global average pool, linear head;
//! - `transformer_only`: raw-image patch tokens, encoder blocks, token mean, head;
//! - `fusion`: the backbone's final feature map is turned into one token per spatial
//!   position and passed through the encoder; the pooled map and the pooled tokens are
//!   concatenated and classified by the head.
//!
//! ```
//! use artfusion::model::{Classifier, ModelConfig, Variant};
//! use artfusion::Tensor;
//!
//! let model = Classifier::new(ModelConfig::tiny(Variant::Fusion, 3)).unwrap();
//! let mut params = model.init_params::<f32>(7).unwrap();
//! let images = Tensor::full(vec![2, 3, 32, 32], 0.5f32);
//! let pred = model.predict(&mut params, images).unwrap();
//! assert_eq!(pred.class_ids.len(), 2);
//! assert!((pred.probs[0].iter().sum::<f64>() - 1.0).abs() < 1e-6);
//! ```

mod checkpoint;
mod classifier;
mod config;

pub use checkpoint::Checkpoint;
pub use classifier::{argmax, global_avg_pool, softmax_row, Classifier, FeatureBundle, Prediction};
pub use config::{CnnConfig, ModelConfig, Variant};

#[cfg(test)]
mod tests;
